# Copyright 2026 The bbcq Authors
# SPDX-License-Identifier: Apache-2.0
"""End-to-end checks of the bbcq command-line tool."""

import json
import os
import re
import subprocess
import sys
import tempfile
import unittest
from pathlib import Path

import jsonschema

CLI = None
SCHEMA = None
ERROR_LINE = re.compile(r"^bbcq: error\[[a-z-]+\]: \S.*$")
SMALL = ["--blocks", "1", "--embed-dim", "16", "--heads", "2", "--patches", "4", "--classes", "4"]


def run(*args, env=None, cwd=None):
    return subprocess.run([CLI, *map(str, args)], capture_output=True, text=True, env=env, cwd=cwd, check=False)


def error_category(proc):
    lines = proc.stderr.strip().splitlines()
    assert len(lines) == 1, proc.stderr
    assert ERROR_LINE.match(lines[0]), lines[0]
    return re.search(r"error\[([a-z-]+)\]", lines[0]).group(1)


def strip_clock(report):
    report = dict(report)
    report.pop("wall_clock_seconds", None)
    return report


class CliTest(unittest.TestCase):
    def setUp(self):
        self._tmp = tempfile.TemporaryDirectory(prefix="bbcq_cli_")
        self.dir = Path(self._tmp.name)

    def tearDown(self):
        self._tmp.cleanup()

    def path(self, name):
        return str(self.dir / name)

    def ok(self, *args, **kwargs):
        proc = run(*args, **kwargs)
        self.assertEqual(proc.returncode, 0, proc.stderr)
        return proc

    def report(self, path):
        with open(path, encoding="utf-8") as f:
            doc = json.load(f)
        jsonschema.validate(doc, SCHEMA)
        return doc

    def gen(self, tag="", *extra):
        m, c, e = self.path(f"m{tag}.bin"), self.path(f"c{tag}.bin"), self.path(f"e{tag}.bin")
        self.ok("gen", *SMALL, "--seed", 3, "--eval-size", 48, "--calib-size", 8, "--model", m, "--calib", c,
                "--eval", e, *extra)
        return m, c, e

    def inspect(self, path):
        out = self.path("inspect.json")
        Path(out).write_text(self.ok("inspect", path).stdout, encoding="utf-8")
        return self.report(out)

    def test_gen_is_deterministic(self):
        first = self.gen("a")
        second = self.gen("b")
        for x, y in zip(first, second):
            self.assertEqual(Path(x).read_bytes(), Path(y).read_bytes())

    def test_calibration_split_size(self):
        m, c = self.path("m.bin"), self.path("c.bin")
        self.ok("gen", *SMALL, "--model", m, "--calib", c)
        self.assertEqual(self.inspect(c)["tensors"][1]["shape"], [32])
        self.ok("gen", *SMALL, "--model", m, "--calib", c, "--calib-size", 32)
        inputs = self.inspect(c)["tensors"][0]
        self.assertEqual(inputs["name"], "inputs")
        self.assertEqual(inputs["shape"][0], 32)

    def test_invalid_spec_fails_before_writing(self):
        proc = run("gen", "--embed-dim", 65, "--heads", 4, "--model", self.path("m.bin"), "--calib",
                   self.path("c.bin"), "--eval", self.path("e.bin"))
        self.assertNotEqual(proc.returncode, 0)
        self.assertEqual(error_category(proc), "config")
        self.assertIn("divisible", proc.stderr)
        self.assertEqual(list(self.dir.iterdir()), [])

    def test_error_categories(self):
        m, c, _ = self.gen()
        proc = run("inspect", self.path("missing.bin"))
        self.assertNotEqual(proc.returncode, 0)
        self.assertEqual(error_category(proc), "io")

        junk = self.path("junk.bin")
        Path(junk).write_bytes(b"not a container at all")
        proc = run("inspect", junk)
        self.assertNotEqual(proc.returncode, 0)
        self.assertEqual(error_category(proc), "format-magic")

        proc = run("eval", "--model", m, "--eval", self.path("missing.bin"))
        self.assertNotEqual(proc.returncode, 0)
        self.assertEqual(error_category(proc), "io")

        for flag, value in [("--wbits", 9), ("--gamma", 101), ("--candidates", 1)]:
            proc = run("calibrate", "--model", m, "--calib", c, "--out", self.path("r.json"), flag, value)
            self.assertNotEqual(proc.returncode, 0, flag)
            self.assertEqual(error_category(proc), "config", flag)

        proc = run("calibrate", "--model", c, "--calib", c, "--out", self.path("r.json"))
        self.assertNotEqual(proc.returncode, 0)
        self.assertEqual(error_category(proc), "format-manifest")

        bad = self.path("bad.json")
        Path(bad).write_text('{"format": "bbcq-calib-result"}', encoding="utf-8")
        proc = run("inspect", bad)
        self.assertNotEqual(proc.returncode, 0)
        self.assertEqual(error_category(proc), "format-manifest")

        proc = run("calibrate", "--model", m)
        self.assertNotEqual(proc.returncode, 0)
        self.assertEqual(len(proc.stderr.strip().splitlines()), 1, proc.stderr)

    def test_calibrate_defaults_and_reproducibility(self):
        m, c, _ = self.gen()
        r1, r2 = self.path("r1.json"), self.path("r2.json")
        self.ok("calibrate", "--model", m, "--calib", c, "--out", r1, "--report", self.path("rep1.json"))
        self.ok("calibrate", "--model", m, "--calib", c, "--out", r2, "--report", self.path("rep2.json"))
        self.assertEqual(Path(r1).read_bytes(), Path(r2).read_bytes())
        rep1, rep2 = self.report(self.path("rep1.json")), self.report(self.path("rep2.json"))
        self.assertEqual(strip_clock(rep1), strip_clock(rep2))
        cfg = rep1["config"]
        self.assertEqual((cfg["candidates"], cfg["rounds"], cfg["gamma"]), (100, 3, 10.0))
        self.assertEqual((cfg["alpha"], cfg["beta"]), (0.0, 1.2))
        self.assertEqual(rep1["calibration_samples"], 8)
        for site in rep1["sites"]:
            if site["searched"]:
                self.assertLessEqual(site["chosen_metric"], site["minmax_metric"], site["site"])
        self.assertEqual(self.inspect(r1)["kind"], "calib-result")

        env = dict(os.environ, BBCQ_THREADS="1")
        r3 = self.path("r3.json")
        self.ok("calibrate", "--model", m, "--calib", c, "--out", r3, "--report", self.path("rep3.json"), env=env)
        self.assertEqual(Path(r1).read_bytes(), Path(r3).read_bytes())

    def test_calibrate_switches(self):
        m, c, _ = self.gen()
        rep = self.path("rep.json")
        self.ok("calibrate", "--model", m, "--calib", c, "--out", self.path("r.json"), "--report", rep,
                "--candidates", 8, "--gamma", 0, "--blocks-as-layers")
        cfg = self.report(rep)["config"]
        self.assertTrue(cfg["blocks_as_layers"])
        self.assertEqual(cfg["gamma"], 0.0)

        self.ok("calibrate", "--model", m, "--calib", c, "--out", self.path("d.json"), "--report", rep,
                "--candidates", 8, "--profile", "detection")
        self.assertEqual(self.report(rep)["config"]["alpha"], 0.5)

        for quant in ["uniform", "log", "twin", "mpq"]:
            self.ok("calibrate", "--model", m, "--calib", c, "--out", self.path(f"{quant}.json"), "--report", rep,
                    "--candidates", 6, "--rounds", 1, "--wbits", 4, "--abits", 4, "--softmax-quant", quant,
                    "--dynamic-softmax")
            doc = self.report(rep)
            self.assertEqual(doc["config"]["softmax_quant"], quant)
            self.assertTrue(doc["config"]["dynamic_softmax"])

    def test_eval_rows(self):
        m, c, e = self.gen()
        rep = self.path("ev.json")
        self.ok("eval", "--model", m, "--eval", e, "--report", rep)
        rows = self.report(rep)["results"]
        self.assertEqual(len(rows), 1)
        self.assertEqual(rows[0]["fp_agreement"], 1.0)
        self.assertEqual(rows[0]["samples"], 48)

        w8, w4 = self.path("w8.json"), self.path("w4.json")
        self.ok("calibrate", "--model", m, "--calib", c, "--out", w8, "--report", self.path("x.json"),
                "--candidates", 10, "--rounds", 1)
        self.ok("calibrate", "--model", m, "--calib", c, "--out", w4, "--report", self.path("x.json"),
                "--candidates", 10, "--rounds", 1, "--wbits", 4, "--abits", 4)
        self.ok("eval", "--model", m, "--eval", e, "--result", w8, "--result", w4, "--report", rep)
        rows = self.report(rep)["results"]
        self.assertEqual([r["label"] for r in rows], ["fp", w8, w4])
        self.assertEqual([(r.get("wbits"), r.get("abits")) for r in rows], [(None, None), (8, 8), (4, 4)])

        stdout = self.ok("eval", "--model", m, "--eval", e, "--result", w8).stdout
        jsonschema.validate(json.loads(stdout), SCHEMA)

    def test_end_to_end_determinism(self):
        reports = []
        for _ in range(2):
            m, c, e = self.gen()
            r = self.path("r.json")
            self.ok("calibrate", "--model", m, "--calib", c, "--out", r, "--report", self.path("cr.json"),
                    "--candidates", 12)
            self.ok("eval", "--model", m, "--eval", e, "--result", r, "--report", self.path("er.json"))
            files = [Path(p).read_bytes() for p in (m, c, e, r)]
            reports.append((files, strip_clock(self.report(self.path("cr.json"))),
                            strip_clock(self.report(self.path("er.json")))))
        self.assertEqual(reports[0], reports[1])

    def test_compare_softmax(self):
        rep = self.path("cs.json")
        self.ok("compare-softmax", "--bits", 4, "--synthetic", "powerlaw", "--report", rep)
        doc = self.report(rep)
        self.assertEqual([r["quantizer"] for r in doc["rows"]], ["uniform", "log", "twin-uniform", "mpq"])
        mpq = doc["rows"][3]
        self.assertEqual(mpq["max_value_error"], 0.0)
        self.assertTrue(mpq["top_value_exact"])

        for kind in ["powerlaw", "gaussian", "onehot"]:
            self.ok("compare-softmax", "--bits", 8, "--synthetic", kind, "--rows", 64, "--report", rep)
            for row in self.report(rep)["rows"]:
                self.assertLessEqual(row["entropy_bits"], 8.0)

        again = self.path("cs2.json")
        self.ok("compare-softmax", "--seed", 11, "--report", rep)
        self.ok("compare-softmax", "--seed", 11, "--report", again)
        self.assertEqual(strip_clock(self.report(rep)), strip_clock(self.report(again)))

        m, _, e = self.gen()
        self.ok("compare-softmax", "--model", m, "--eval", e, "--report", rep)
        doc = self.report(rep)
        self.assertEqual(doc["source"], "model")
        self.assertEqual(len(doc["rows"]), 4)

        proc = run("compare-softmax", "--synthetic", "zipf")
        self.assertNotEqual(proc.returncode, 0)
        self.assertEqual(len(proc.stderr.strip().splitlines()), 1, proc.stderr)

    def test_inspect_model(self):
        m, _, _ = self.gen()
        doc = self.inspect(m)
        self.assertEqual(doc["kind"], "model")
        self.assertEqual(doc["model_spec"]["embed_dim"], 16)
        self.assertEqual(doc["tensors"][0]["name"], "embed.weight")


if __name__ == "__main__":
    if len(sys.argv) < 3:
        sys.exit("usage: test_cli.py <bbcq binary> <report schema>")
    CLI = sys.argv.pop(1)
    with open(sys.argv.pop(1), encoding="utf-8") as schema_file:
        SCHEMA = json.load(schema_file)
    jsonschema.Draft202012Validator.check_schema(SCHEMA)
    unittest.main()
