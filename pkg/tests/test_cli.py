from __future__ import annotations

import json
import subprocess
import sys

import pytest

from hiervlp.cli import build_parser, main
from hiervlp.encoders import EncoderBundle, EncoderConfig, save_checkpoint
from hiervlp.memory_bank import build_bank, save_bank

from conftest import ROOT


def _synth(out, seed=7, extra=()):
    return main(["synth", "--n-narrative", "3", "--n-silent", "2", "--clips", "2", "--concepts", "2",
                 "--seed", str(seed), "--out", str(out), *extra])


def test_synth_is_deterministic(tmp_path):
    assert _synth(tmp_path / "a.jsonl") == 0
    assert _synth(tmp_path / "b.jsonl") == 0
    assert (tmp_path / "a.jsonl").read_bytes() == (tmp_path / "b.jsonl").read_bytes()
    assert _synth(tmp_path / "c.jsonl", seed=8) == 0
    assert (tmp_path / "a.jsonl").read_bytes() != (tmp_path / "c.jsonl").read_bytes()


def test_kb_retrieve_on_empty_bank(tmp_path, capsys, fixture_dataset):
    path = tmp_path / "empty.npz"
    enc = EncoderBundle(EncoderConfig(dim=8, query_dim=8, image_size=16))
    save_bank(build_bank([], enc, fixture_dataset), path)
    assert main(["kb-retrieve", "--bank", str(path), "--title", "anything"]) == 1
    err = capsys.readouterr().err.strip().splitlines()
    assert len(err) == 1 and err[0].startswith("error: EmptyBank")


def test_missing_config_exits_2(tmp_path, capsys):
    _synth(tmp_path / "m.jsonl")
    with pytest.raises(SystemExit) as exc:
        main(["pretrain", "--manifest", str(tmp_path / "m.jsonl"), "--config", "missing.yaml",
              "--out", str(tmp_path / "run")])
    assert exc.value.code == 2
    assert capsys.readouterr().err.startswith("error: UsageError")


def test_unknown_flag_exits_2(tmp_path):
    with pytest.raises(SystemExit) as exc:
        _synth(tmp_path / "m.jsonl", extra=("--frobnicate",))
    assert exc.value.code == 2


def test_runtime_error_is_single_line(tmp_path, capsys):
    bad = tmp_path / "bad.jsonl"
    bad.write_text('{"type": "clip"}\n')
    ckpt = tmp_path / "c.npz"
    save_checkpoint(ckpt, EncoderBundle(EncoderConfig(dim=8, query_dim=8, image_size=16)))
    assert main(["kb-build", "--manifest", str(bad), "--checkpoint", str(ckpt), "--out", str(tmp_path / "b")]) == 1
    err = capsys.readouterr().err
    assert err.count("\n") == 1 and err.startswith("error: SchemaError")


def test_help_documents_every_flag():
    parser = build_parser()
    sub = next(a for a in parser._actions if a.dest == "command")
    assert {"synth", "pretrain", "kb-build", "kb-retrieve", "eval-zeroshot", "probe", "kb"} <= set(sub.choices)
    for name, p in sub.choices.items():
        for action in p._actions:
            if action.option_strings and action.dest != "help":
                assert action.help, (name, action.dest)


def test_console_script_module_entry(tmp_path):
    out = subprocess.run([sys.executable, "-m", "hiervlp.cli", "--version"], capture_output=True, text=True)
    assert out.returncode == 0 and out.stdout.startswith("hiervlp ")


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory, fixture_path):
    """pretrain (short schedule) -> kb build -> retrieve -> zero-shot -> probe on the fixture."""
    d = tmp_path_factory.mktemp("cli")
    manifest = d / "m.jsonl"
    manifest.write_bytes(fixture_path.read_bytes())
    cfg = ROOT / "configs" / "desk.yaml"
    # 20 epochs: 12 clip warm-up then the same CCCVV rhythm
    (d / "short.yaml").write_text(cfg.read_text().replace("warmup_clip_epochs: 40", "warmup_clip_epochs: 12"))
    rc = main(["pretrain", "--manifest", str(manifest), "--config", str(d / "short.yaml"),
               "--out", str(d / "run"), "--total-epochs", "20"])
    assert rc == 0
    return d


def test_pipeline_pretrain_outputs(pipeline):
    metrics = (pipeline / "run" / "metrics.jsonl").read_text().splitlines()
    assert len(metrics) == 20
    config = json.loads((pipeline / "run" / "config.json").read_text())
    assert config["total_epochs"] == 20 and config["warmup_clip_epochs"] == 12 and config["version"]


def test_pipeline_kb(pipeline, capsys, fixture_dataset):
    ckpt = pipeline / "run" / "ckpt_epoch0020.npz"
    bank = pipeline / "bank.npz"
    manifest_bytes = (pipeline / "m.jsonl").read_bytes()
    assert main(["kb", "build", "--manifest", str(pipeline / "m.jsonl"), "--checkpoint", str(ckpt),
                 "--out", str(bank)]) == 0
    assert (pipeline / "m.jsonl").read_bytes() == manifest_bytes
    capsys.readouterr()
    silent = fixture_dataset.silent_videos()[1]
    assert main(["kb-retrieve", "--bank", str(bank), "--title", silent.title, "--k", "3"]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert len(lines) == 3 and lines[0].split("\t")[0] == silent.video_id
    scores = [float(l.split("\t")[1]) for l in lines]
    assert scores == sorted(scores, reverse=True)


def test_pipeline_zero_shot_and_probe(pipeline, capsys):
    labels = pipeline / "labels.json"
    assert _synth(pipeline / "unused.jsonl", extra=("--labels-out", str(labels))) == 0
    doc = json.loads(labels.read_text())
    # the fixture has 4 concepts; rebuild the label file for them
    from hiervlp.data import synthetic_label_names

    names = synthetic_label_names(4)
    doc["labels"] = names
    doc["templates"] = {n: {"caption": f"A surgical video of {n}."} for n in names}
    labels.write_text(json.dumps(doc))
    ckpt = pipeline / "run" / "ckpt_epoch0020.npz"
    out = pipeline / "zs.json"
    assert main(["eval-zeroshot", "--checkpoint", str(ckpt), "--manifest", str(pipeline / "m.jsonl"),
                 "--labels", str(labels), "--out", str(out)]) == 0
    res = json.loads(out.read_text())
    assert set(res["metrics"]) == {"accuracy", "macro_f1"} and set(res["per_class"]) <= set(names)
    assert res["version"] and res["config"]["prompt_style"] == "caption"

    probe = pipeline / "probe.json"
    assert main(["probe", "--checkpoint", str(ckpt), "--manifest", str(pipeline / "m.jsonl"),
                 "--fraction", "1.0", "--out", str(probe)]) == 0
    res = json.loads(probe.read_text())
    assert 0.0 <= res["metrics"]["accuracy"] <= 1.0 and res["version"]


def test_pipeline_resume_flag(pipeline, tmp_path):
    run = tmp_path / "run"
    cfg = str(pipeline / "short.yaml")
    args = ["pretrain", "--manifest", str(pipeline / "m.jsonl"), "--config", cfg, "--out", str(run),
            "--total-epochs", "14", "--seed", "3"]
    assert main(args) == 0
    before = (run / "metrics.jsonl").read_text()
    assert main(args + ["--resume"]) == 0
    # nothing left to do: the log is unchanged
    assert (run / "metrics.jsonl").read_text() == before
    assert json.loads((run / "config.json").read_text())["seed"] == 3


def test_within_query_flag_spellings(tmp_path):
    m, c = tmp_path / "m.jsonl", tmp_path / "c.yaml"
    m.write_text("")
    c.write_text("")
    base = ["pretrain", "--manifest", str(m), "--config", str(c), "--out", str(tmp_path)]
    for flag in ("--eq7-literal", "--within-query-only"):
        assert build_parser().parse_args(base + [flag]).within_query_only is True
    assert build_parser().parse_args(base).within_query_only is None
