"""Command line tests: exit codes, artifact round trips, and flag handling.

Everything runs in-process through ``main(argv)`` against a module-scoped
workspace with a small dataset and a two-step training run.
"""

import os
import xml.etree.ElementTree as ET

import numpy as np
import pytest

from dima.cli import main
from dima.numerics import AdamW
from dima.training.checkpoint import load_checkpoint, save_checkpoint
from dima.training.config import RunConfig, load_config
from dima.world import load_dataset

TINY_KW = dict(d=8, d_l=8, n_q=2, heads=2, lm_heads=2, enc_blocks=1,
               planner_blocks=1, lm_layers=1, context=64, head_hidden=8,
               agent_bank=8, map_bank=8, grid_resolution=2.0, grid_extent=4.0,
               stage1_steps=2, stage2_steps=2, batch=2)


@pytest.fixture(scope="module")
def ws(tmp_path_factory):
    """Workspace: dataset, config file, and both training checkpoints."""
    root = tmp_path_factory.mktemp("ws")
    dataset = root / "scenes.jsonl"
    assert main(["datagen", "--out", str(dataset), "--count", "12",
                 "--seed", "3"]) == 0

    config = RunConfig(**TINY_KW).replace(dataset=str(dataset),
                                          out_dir=str(root / "runs"))
    cfg_path = root / "run.cfg"
    cfg_path.write_text(config.canonical())
    assert main(["train", "--config", str(cfg_path)]) == 0
    return {"root": root, "dataset": dataset, "config": config,
            "cfg_path": cfg_path,
            "stage1": root / "runs" / "stage1.ckpt",
            "stage2": root / "runs" / "stage2.ckpt"}


# ---------------------------------------------------------------------------
# datagen


def test_datagen_is_deterministic(tmp_path, capsys):
    a, b, c = (tmp_path / n for n in ("a.jsonl", "b.jsonl", "c.jsonl"))
    assert main(["datagen", "--out", str(a), "--count", "9", "--seed", "5"]) == 0
    assert main(["datagen", "--out", str(b), "--count", "9", "--seed", "5"]) == 0
    assert main(["datagen", "--out", str(c), "--count", "9", "--seed", "6"]) == 0
    assert a.read_bytes() == b.read_bytes()
    assert a.read_bytes() != c.read_bytes()
    out = capsys.readouterr().out
    assert "wrote 9 scenes" in out


def test_datagen_mix_restricts_kinds(tmp_path):
    path = tmp_path / "straight.jsonl"
    assert main(["datagen", "--out", str(path), "--count", "6", "--seed", "1",
                 "--mix", "straight=1"]) == 0
    assert {s.kind for s in load_dataset(path)} == {"straight"}


def test_datagen_exclude_kind(tmp_path):
    path = tmp_path / "no3pt.jsonl"
    assert main(["datagen", "--out", str(path), "--count", "20", "--seed", "2",
                 "--exclude-kind", "three-point-turn"]) == 0
    kinds = {s.kind for s in load_dataset(path)}
    assert "three-point-turn" not in kinds
    assert len(kinds) > 1


def test_datagen_rejects_bad_mixes(tmp_path, capsys):
    out = str(tmp_path / "x.jsonl")
    assert main(["datagen", "--out", out, "--mix", "wheelie=1"]) == 2
    assert "wheelie" in capsys.readouterr().err
    assert main(["datagen", "--out", out, "--mix", "straight"]) == 2
    assert main(["datagen", "--out", out, "--mix", "straight=-1"]) == 2
    assert main(["datagen", "--out", out, "--exclude-kind", "hopscotch"]) == 2
    args = ["datagen", "--out", out]
    for kind in ("straight", "turn-left", "turn-right", "three-point-turn",
                 "resume-from-stop", "overtake"):
        args += ["--exclude-kind", kind]
    assert main(args) == 2
    assert "empty" in capsys.readouterr().err


def test_seed_env_fallback_and_flag_priority(tmp_path, monkeypatch):
    flagged, env_only, won = (tmp_path / n for n in ("f.jsonl", "e.jsonl", "w.jsonl"))
    assert main(["datagen", "--out", str(flagged), "--count", "5", "--seed", "9"]) == 0
    monkeypatch.setenv("DIMA_SEED", "9")
    assert main(["datagen", "--out", str(env_only), "--count", "5"]) == 0
    assert flagged.read_bytes() == env_only.read_bytes()
    # explicit flag beats the environment
    assert main(["datagen", "--out", str(won), "--count", "5", "--seed", "4"]) == 0
    assert won.read_bytes() != env_only.read_bytes()
    monkeypatch.setenv("DIMA_SEED", "not-a-number")
    assert main(["datagen", "--out", str(tmp_path / "z.jsonl"), "--count", "2"]) == 2


# ---------------------------------------------------------------------------
# train


def test_train_artifacts_exist(ws):
    for name in ("stage1_loss.csv", "stage1.ckpt", "stage2_loss.csv", "stage2.ckpt"):
        assert (ws["root"] / "runs" / name).exists()
    state = load_checkpoint(ws["stage2"], ws["config"])
    assert state.stage == 2 and state.step == 2


def test_train_stage2_requires_stage1_artifact(ws, tmp_path, capsys):
    config = ws["config"].replace(out_dir=str(tmp_path / "fresh"))
    cfg = tmp_path / "fresh.cfg"
    cfg.write_text(config.canonical())
    assert main(["train", "--config", str(cfg), "--stage", "2"]) == 2
    assert "stage-1 checkpoint missing" in capsys.readouterr().err


def test_train_rejects_unknown_config_keys(tmp_path, capsys):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("sed = 1\n")
    assert main(["train", "--config", str(cfg)]) == 2
    assert "sed" in capsys.readouterr().err


def test_train_missing_config_file(tmp_path):
    assert main(["train", "--config", str(tmp_path / "absent.cfg")]) == 2


def test_train_divergence_exit_code(ws, tmp_path, capsys):
    config = ws["config"].replace(stage1_steps=1, out_dir=str(tmp_path / "runs"))
    cfg = tmp_path / "diverge.cfg"
    cfg.write_text(config.canonical())
    state = load_checkpoint(ws["stage1"], ws["config"], force=True)
    # huge but finite: checkpoints refuse inf, the forward pass overflows on its own
    state.params["planner/out/w"].data[:] = 1e200
    opt = AdamW(state.params, base_lr=config.base_lr, total_steps=1)
    poisoned = tmp_path / "poisoned.ckpt"
    save_checkpoint(poisoned, state.params, opt, config, stage=1, step=0)
    with np.errstate(invalid="ignore", over="ignore"):
        code = main(["train", "--config", str(cfg), "--stage", "1",
                     "--resume", str(poisoned)])
    assert code == 3
    assert "diverged" in capsys.readouterr().err


# ---------------------------------------------------------------------------
# eval


def test_eval_writes_metrics_csv(ws, tmp_path, capsys):
    out = tmp_path / "metrics.csv"
    assert main(["eval", "--checkpoint", str(ws["stage1"]),
                 "--dataset", str(ws["dataset"]), "--config", str(ws["cfg_path"]),
                 "--out", str(out)]) == 0
    lines = out.read_text().splitlines()
    assert lines[0].startswith("split,protocol,count")
    cells = lines[1].split(",")
    assert cells[0] == "full" and cells[1] == "standardized" and cells[2] == "12"
    assert "n=12" in capsys.readouterr().out


def test_eval_vad_protocol_and_split(ws, tmp_path):
    out = tmp_path / "vad.csv"
    assert main(["eval", "--checkpoint", str(ws["stage1"]),
                 "--dataset", str(ws["dataset"]), "--config", str(ws["cfg_path"]),
                 "--protocol", "vad", "--split", "targeted",
                 "--out", str(out)]) == 0
    assert ",vad," in out.read_text().splitlines()[1]


def test_eval_dual_needs_the_language_checkpoint(ws, tmp_path, capsys):
    assert main(["eval", "--checkpoint", str(ws["stage1"]),
                 "--dataset", str(ws["dataset"]), "--config", str(ws["cfg_path"]),
                 "--dual", "--out", str(tmp_path / "d.csv")]) == 2
    assert "mllm-checkpoint" in capsys.readouterr().err


def test_eval_dual_runs_with_both_checkpoints(ws, tmp_path):
    out = tmp_path / "dual.csv"
    assert main(["eval", "--checkpoint", str(ws["stage1"]),
                 "--dataset", str(ws["dataset"]), "--config", str(ws["cfg_path"]),
                 "--dual", "--mllm-checkpoint", str(ws["stage2"]),
                 "--out", str(out)]) == 0
    assert out.exists()


def test_eval_config_hash_guard_and_force(ws, tmp_path):
    other = tmp_path / "other.cfg"
    other.write_text(ws["config"].replace(base_lr=5e-4).canonical())
    args = ["eval", "--checkpoint", str(ws["stage1"]),
            "--dataset", str(ws["dataset"]), "--config", str(other),
            "--out", str(tmp_path / "m.csv")]
    assert main(args) == 2
    assert main(args + ["--force"]) == 0


def test_eval_unknown_split_and_protocol(ws, tmp_path):
    assert main(["eval", "--checkpoint", str(ws["stage1"]),
                 "--dataset", str(ws["dataset"]), "--config", str(ws["cfg_path"]),
                 "--split", "weekdays", "--out", str(tmp_path / "m.csv")]) == 2
    with pytest.raises(SystemExit) as exc:
        main(["eval", "--checkpoint", str(ws["stage1"]),
              "--dataset", str(ws["dataset"]), "--protocol", "bogus"])
    assert exc.value.code == 2


def test_eval_empty_split_warns(ws, tmp_path, capsys):
    # the fixture dataset is small enough that some kind is absent
    kinds = {s.kind for s in load_dataset(ws["dataset"])}
    missing = next(k for k in ("straight", "turn-left", "turn-right", "overtake",
                               "resume-from-stop", "three-point-turn")
                   if k not in kinds)
    assert main(["eval", "--checkpoint", str(ws["stage1"]),
                 "--dataset", str(ws["dataset"]), "--config", str(ws["cfg_path"]),
                 "--split", f"longtail:{missing}",
                 "--out", str(tmp_path / "m.csv")]) == 0
    captured = capsys.readouterr()
    assert "no scenes" in captured.err


# ---------------------------------------------------------------------------
# ask


def test_ask_answers_deterministically(ws, capsys):
    scene_id = load_dataset(ws["dataset"])[0].scene_id
    args = ["ask", "--checkpoint", str(ws["stage2"]),
            "--dataset", str(ws["dataset"]), "--scene-id", scene_id,
            "--config", str(ws["cfg_path"]),
            "--question", "describe the current motion of the ego vehicle ."]
    assert main(args) == 0
    first = capsys.readouterr().out
    assert main(args) == 0
    assert capsys.readouterr().out == first


def test_ask_rejects_unknown_words(ws, capsys):
    scene_id = load_dataset(ws["dataset"])[0].scene_id
    assert main(["ask", "--checkpoint", str(ws["stage2"]),
                 "--dataset", str(ws["dataset"]), "--scene-id", scene_id,
                 "--config", str(ws["cfg_path"]),
                 "--question", "any zebras nearby ?"]) == 2
    assert "zebras" in capsys.readouterr().err


def test_ask_rejects_unknown_scene(ws, capsys):
    assert main(["ask", "--checkpoint", str(ws["stage2"]),
                 "--dataset", str(ws["dataset"]), "--scene-id", "nope-404",
                 "--config", str(ws["cfg_path"]),
                 "--question", "what should the ego vehicle do next ?"]) == 2
    assert "nope-404" in capsys.readouterr().err


# ---------------------------------------------------------------------------
# report


def test_report_renders_loss_and_metrics(ws, tmp_path):
    loss_svg = tmp_path / "loss.svg"
    assert main(["report", "--loss-csv", str(ws["root"] / "runs" / "stage2_loss.csv"),
                 "--out-svg", str(loss_svg)]) == 0
    ET.parse(loss_svg)

    metrics_csv = tmp_path / "m.csv"
    assert main(["eval", "--checkpoint", str(ws["stage1"]),
                 "--dataset", str(ws["dataset"]), "--config", str(ws["cfg_path"]),
                 "--out", str(metrics_csv)]) == 0
    bars_svg = tmp_path / "bars.svg"
    assert main(["report", "--metrics-csv", str(metrics_csv),
                 "--out-svg", str(bars_svg)]) == 0
    ET.parse(bars_svg)


def test_report_requires_exactly_one_input(ws, tmp_path, capsys):
    svg = str(tmp_path / "x.svg")
    assert main(["report", "--out-svg", svg]) == 2
    loss = str(ws["root"] / "runs" / "stage1_loss.csv")
    assert main(["report", "--loss-csv", loss, "--metrics-csv", loss,
                 "--out-svg", svg]) == 2
    assert "exactly one" in capsys.readouterr().err


def test_report_names_the_broken_row(tmp_path, capsys):
    bad = tmp_path / "bad.csv"
    bad.write_text("step,planning,llm,recon,future,distill,edit,total,lr\n1,2\n")
    assert main(["report", "--loss-csv", str(bad),
                 "--out-svg", str(tmp_path / "x.svg")]) == 2
    assert "row 2" in capsys.readouterr().err


# ---------------------------------------------------------------------------
# help output


@pytest.mark.parametrize("command", ["datagen", "train", "eval", "ask", "report"])
def test_help_lists_flags_with_defaults(command, capsys):
    with pytest.raises(SystemExit) as exc:
        main([command, "--help"])
    assert exc.value.code == 0
    text = capsys.readouterr().out
    assert "(default:" in text
    expected_flags = {
        "datagen": ("--out", "--count", "--seed", "--mix", "--exclude-kind"),
        "train": ("--config", "--stage", "--resume"),
        "eval": ("--checkpoint", "--dataset", "--split", "--protocol", "--dual",
                 "--mllm-checkpoint", "--config", "--force", "--out"),
        "ask": ("--checkpoint", "--dataset", "--scene-id", "--question"),
        "report": ("--loss-csv", "--metrics-csv", "--out-svg"),
    }[command]
    for flag in expected_flags:
        assert flag in text
