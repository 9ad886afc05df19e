import sys
from pathlib import Path

import pandas as pd
import pytest

ROOT = Path(__file__).resolve().parents[1]
if str(ROOT) not in sys.path:
    sys.path.insert(0, str(ROOT))

from converting_public_dataset.convert_defect_table import convert
from defect_graph.cli import RunConfig, parse_run_config, read_run_config, write_run_config
from defect_graph.errors import UsageError, ValidationError
from defect_graph.ingest import read_manifest


def test_parse_full_config():
    cfg = parse_run_config(
        """
        # cross-project run
        protocol = CPDP
        target = data/b-2.0
        sources = data/a-1.0, data/a-1.1
        view = ddg
        mlp_hidden = 64,32
        sampling_ratio = 2
        weighted_aggregation = yes
        lr = 0.005
        """,
        base_dir="/work",
    )
    assert cfg.protocol == "cpdp"
    assert cfg.reps == 20
    assert cfg.sources == ("data/a-1.0", "data/a-1.1")
    assert cfg.view == "ddg"
    assert cfg.dataset_paths() == ["/work/data/b-2.0", "/work/data/a-1.0", "/work/data/a-1.1"]
    model = cfg.model_config(seed=9)
    assert model.mlp_hidden == (64, 32)
    assert model.weighted_aggregation
    assert model.lr == 0.005
    assert model.seed == 9
    assert model.sampling_ratio == 2.0


def test_wpdp_defaults():
    cfg = parse_run_config("dataset=x-1.0\n")
    assert cfg.reps == 100
    assert cfg.view == "msdg"
    assert cfg.sampling_ratio == "auto"


@pytest.mark.parametrize(
    "text",
    [
        "protocol=wpdp\n",
        "protocol=cpdp\ntarget=t\n",
        "dataset=a\ndataset=b\n",
        "dataset=a\nhidden_size=big\n",
        "dataset=a\nview=ast\n",
        "dataset=a\nreps=0\n",
        "dataset=a\nweighted_aggregation=maybe\n",
        "just some words\n",
        "protocol=lopo\ndataset=a\n",
    ],
)
def test_bad_configs(text):
    with pytest.raises(ValidationError):
        parse_run_config(text)


def test_written_config_reads_back(tmp_path):
    cfg = parse_run_config("dataset=proj-1.0\nreps=7\nsampling_ratio=none\nmethod=mine\n", base_dir=str(tmp_path))
    path = tmp_path / "out.conf"
    write_run_config(cfg, str(path), header="first\nsecond")
    text = path.read_text()
    assert text.startswith("# first\n# second\n")
    back = read_run_config(str(path))
    assert back == RunConfig(**{**vars(cfg), "dataset": str(tmp_path / "proj-1.0")})
    assert back.sampling_ratio is None
    with pytest.raises(UsageError):
        read_run_config(str(tmp_path / "absent.conf"))


def test_convert_defect_table(tmp_path, capsys):
    table = tmp_path / "table.csv"
    pd.DataFrame({
        "File": ["src\\A.java", "src/B.java", "src/B.java", "src/C.java"],
        "RealBug": [2, 0, 0, 1],
        "LOC": [100, 20, 20, 55],
        "CC": [3.5, 1.0, 1.0, 2.0],
        "Owner": ["x", "y", "y", "z"],
        "HeuBug": [1, 0, 0, 0],
    }).to_csv(table, index=False)
    out = tmp_path / "proj-1.0"
    convert(str(table), str(out), drop=["HeuBug"], project="proj", version="1.0")

    metrics = pd.read_csv(out / "metrics.csv")
    assert list(metrics.columns) == ["file", "label", "LOC", "CC"]
    assert list(metrics["file"]) == ["src/A.java", "src/B.java", "src/C.java"]
    assert list(metrics["label"]) == [1, 0, 1]
    manifest, extra = read_manifest(str(out / "manifest.json"))
    assert manifest.names == ("LOC", "CC")
    assert extra == {"project": "proj", "version": "1.0"}
    assert "dropping non-numeric column(s): Owner" in capsys.readouterr().out
