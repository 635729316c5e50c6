"""
Copyright (c) 2026 The stagedann authors.

This file is part of stagedann, a staged graph-based nearest neighbor search engine.

stagedann is free software: you can redistribute it and/or modify
it under the terms of the MIT License as published by the Massachusetts
Institute of Technology.

For full details, please see the LICENSE file located in the root
directory of this project.
"""

import json
import tempfile
import unittest
from pathlib import Path

from stagedann.config import PRESETS, BenchConfig
from stagedann.exceptions import ConfigException


class TestBenchConfig(unittest.TestCase):
    """Test cases for BenchConfig."""

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.path = Path(self.tmp.name) / "sub" / "bench.json"

    def tearDown(self):
        self.tmp.cleanup()

    def write(self, content: str):
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self.path.write_text(content)

    def test_defaults(self):
        config = BenchConfig(self.path)
        assert config.path == self.path
        assert config.k == 10 and config.M == 32 and config.batch_size == 256
        assert (config.sampling_ratio, config.svd_ratio) == PRESETS["desk"]
        assert config.threads is None
        config.validate()

    def test_load_json(self):
        self.write(json.dumps({"k": 5, "sweep": [8, 16], "index_path": "/tmp/x.graph"}))
        config = BenchConfig(self.path)
        assert config.k == 5
        assert config.sweep == [8, 16]
        assert config.index_path == "/tmp/x.graph"

    def test_preset_from_file(self):
        """A preset sets both ratios unless the file pins one of them."""
        self.write(json.dumps({"preset": "deep", "svd_ratio": 0.5}))
        config = BenchConfig(self.path)
        assert config.sampling_ratio == PRESETS["deep"][0]
        assert config.svd_ratio == 0.5

    def test_unknown_key(self):
        self.write(json.dumps({"ef_search": 10}))
        with self.assertRaises(ConfigException):
            BenchConfig(self.path)

    def test_invalid_json(self):
        self.write("{not json")
        with self.assertRaises(ConfigException):
            BenchConfig(self.path)

    def test_not_an_object(self):
        self.write("[1, 2]")
        with self.assertRaises(ConfigException):
            BenchConfig(self.path)

    def test_overrides(self):
        config = BenchConfig(self.path).apply_overrides(k=20, M=None, preset="laion")
        assert config.k == 20
        assert config.M == 32
        assert (config.sampling_ratio, config.svd_ratio) == PRESETS["laion"]
        pinned = BenchConfig(self.path).apply_overrides(preset="wiki", sampling_ratio=0.4)
        assert pinned.sampling_ratio == 0.4 and pinned.svd_ratio == PRESETS["wiki"][1]
        with self.assertRaises(ConfigException):
            BenchConfig(self.path).apply_overrides(bogus=1)
        with self.assertRaises(ConfigException):
            BenchConfig(self.path).apply_overrides(preset="unknown")

    def test_validate(self):
        for overrides in (
            {"sampling_ratio": 0.0},
            {"svd_ratio": 1.5},
            {"sweep": []},
            {"k": 0},
            {"M": 1},
            {"fes_r": 0},
            {"batch_size": 0},
            {"target_recall": 1.2},
            {"base_path": "base.fvecs"},
            {"synthetic_kind": "spiral"},
        ):
            config = BenchConfig(self.path)
            config.__dict__.update(overrides)
            with self.assertRaises(ConfigException):
                config.validate()

    def test_save_and_reload(self):
        config = BenchConfig(self.path).apply_overrides(k=7, preset="t2i")
        assert config.save() == self.path
        assert self.path.parent.is_dir()
        reloaded = BenchConfig(self.path)
        assert reloaded.to_dict() == config.to_dict()

    def test_save_with_artifact(self):
        """The resolved config lands next to the artifact and loads back."""
        artifact = Path(self.tmp.name) / "out" / "graph.csr"
        config = BenchConfig(self.path).apply_overrides(M=12, synthetic_kind="trajectory")
        written = config.save_with_artifact(str(artifact))
        assert written == Path(f"{artifact}.config.json")
        assert json.loads(written.read_text())["M"] == 12
        assert BenchConfig(written).synthetic_kind == "trajectory"

    def test_save_failure(self):
        """An unwritable target raises ConfigException."""
        blocker = Path(self.tmp.name) / "file"
        blocker.write_text("")
        with self.assertRaises(ConfigException):
            BenchConfig(self.path).save(blocker / "bench.json")


if __name__ == "__main__":
    unittest.main()
