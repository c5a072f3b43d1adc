import json

import pytest

from rt3 import pipeline as pl
from rt3.errors import ConfigError, EXIT_INFEASIBLE


class TestParseConfig:
    def test_defaults(self):
        cfg = pl.parse_config({})
        assert cfg.levels == ["l3", "l4", "l6"]
        assert cfg.search.seed == cfg.seed == 0

    def test_timing_units_and_seed(self):
        cfg = pl.parse_config({"seed": 5, "search": {"timing": "0.2s"}})
        assert cfg.search.timing == 0.2
        assert cfg.search.seed == 5
        assert cfg.dataset.seed == 5

    @pytest.mark.parametrize(
        "raw",
        [
            {"bogus": 1},
            {"prune": {"axis": "diagonal"}},
            {"search": {"wat": 1}},
            {"levels": ["l9"]},
            {"dvfs": "missing.json"},
            {"prune": {"threshold": 0.5, "percentile": 0.5}},
        ],
    )
    def test_rejects(self, raw):
        with pytest.raises(ConfigError):
            pl.parse_config(raw)

    def test_relative_dvfs(self, tmp_path):
        (tmp_path / "t.json").write_text(json.dumps({"levels": [{"name": "a", "freq_mhz": 100, "voltage_mv": 900}]}))
        cfg = pl.parse_config({"dvfs": "t.json", "levels": ["a"]}, tmp_path)
        assert [l.name for l in cfg.table()] == ["a"]

    def test_header_tracks_config(self):
        a = pl.parse_config({"seed": 1}).header()
        b = pl.parse_config({"seed": 2}).header()
        assert a["config_hash"] != b["config_hash"]


class TestCommit:
    def test_all_or_nothing(self, tmp_path):
        ok = tmp_path / "a.txt"
        blocked = tmp_path / "file"
        blocked.write_text("x")
        with pytest.raises(OSError):
            pl.commit_paths({ok: "a", blocked / "b.txt": "b"})
        assert not ok.exists()
        assert sorted(p.name for p in tmp_path.iterdir()) == ["file"]

    def test_writes(self, tmp_path):
        pl.commit({"x.csv": "1\n", "y.json": "{}\n"}, tmp_path / "out")
        assert (tmp_path / "out" / "x.csv").read_text() == "1\n"


class TestStages:
    def test_infeasible_deadline_reports_stage(self, tmp_path):
        raw = json.loads(json.dumps(pl.demo_config().raw))
        raw["search"]["timing"] = "1ms"
        raw["model"]["pretrain_epochs"] = 1
        raw["prune"]["finetune_epochs"] = 0
        with pytest.raises(pl.StageError) as exc:
            pl.run_pipeline(pl.parse_config(raw), tmp_path / "out")
        assert exc.value.stage == "space"
        assert exc.value.exit_code == EXIT_INFEASIBLE
        assert not (tmp_path / "out").exists()
