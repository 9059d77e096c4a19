import csv

import numpy as np
import pytest

from freqalign.attack import AttackConfig
from freqalign.cli import main
from freqalign.config import ConfigError, RunConfig, parse_config, parse_value, to_text
from freqalign.imageio import load_ppm, load_tensor, save_ppm
from freqalign.spectral import RadialFilter
from freqalign.synthetic import smooth_image

SMALL = """
[attack]
iters = 3
theta = 2
n = 4

[run]
image_size = [8, 8, 3]
synthetic_pairs = 2

[[ensemble]]
kind = "linear-patch"
patch_size = 2
embed_dim = 8
seed = 1

[[ensemble]]
kind = "attention-1layer"
patch_size = 2
embed_dim = 6
seed = 2

[[holdout]]
kind = "attention-1layer"
patch_size = 2
embed_dim = 8
seed = 1001
"""


@pytest.fixture
def small_config(tmp_path):
    path = tmp_path / "small.cfg"
    path.write_text(SMALL)
    return path


def read_rows(path):
    with open(path) as fh:
        lines = fh.read().splitlines()
    assert lines[0] == "# freqalign metrics v1"
    return list(csv.DictReader(lines[1:]))


# --- parsing ----------------------------------------------------------------------


def test_empty_config_gives_defaults():
    cfg = parse_config("")
    assert cfg == RunConfig()
    a = cfg.attack
    assert a == AttackConfig()
    assert (a.epsilon, a.alpha, a.iters, a.theta, a.n, a.w_g, a.w_l, a.lam, a.mu) == (16 / 255, 1 / 255, 300, 10, 10, 1.0, 0.2, 0.1, 1.0)
    assert a.fgr == RadialFilter("polynomial", p=1.5)
    assert a.optimizer == "mi-fgsm"


def test_band_clip_without_thresholds_uses_default_bands():
    fgr = parse_config('[fgr]\nkind = "band-clip"\n').attack.fgr
    assert (fgr.kind, fgr.tau_low, fgr.tau_high) == ("band-clip", 1 / 3, 2 / 3)


def test_zero_epsilon_names_key_and_line():
    with pytest.raises(ConfigError, match=r"cfg line 3: key attack\.epsilon"):
        parse_config("[attack]\niters = 5\nepsilon = 0\n", "cfg")


@pytest.mark.parametrize(
    "text,pattern",
    [
        ("[attack]\nepsilonn = 1\n", r"line 2: unknown key attack\.epsilonn"),
        ("[attacks]\n", r"line 1: unknown section"),
        ("[attack]\niters = 2.5\n", r"line 2: key attack\.iters: expected an integer"),
        ("iters = 3\n", r"line 1: key 'iters' appears before any section"),
        ("[fgr]\ngammas = [1, 2]\n", r"line 2: key fgr\.gammas"),
        ('[[pair]]\nsource = "a.ppm"\n', r"line 1: \[\[pair\]\] missing"),
        ("[[holdout]]\nseed = 1\n", r"holdout\.seed"),
        ("[sweep]\nparam = \"run.output_dir\"\n", r"line 2: key sweep\.param"),
    ],
)
def test_errors_are_located(text, pattern):
    with pytest.raises(ConfigError, match=pattern):
        parse_config(text)


def test_value_syntax():
    assert parse_value("16/255") == pytest.approx(16 / 255)
    assert parse_value('"x y"') == "x y"
    assert parse_value("mi-fgsm") == "mi-fgsm"
    assert parse_value("[1, 2.5, \"a\"]") == [1, 2.5, "a"]
    assert parse_value("true") is True


def test_effective_config_round_trips():
    cfg = parse_config(SMALL + '\n[[pair]]\nsource = "s.ppm"\ntarget = "t.ppm"\n[sweep]\nparam = "fgr.p"\nvalues = [0.5, 1.0]\n')
    assert parse_config(to_text(cfg)) == cfg


def test_comments_and_fractions():
    cfg = parse_config("[attack]  # budget\nepsilon = 8/255 # half\n")
    assert cfg.attack.epsilon == 8 / 255


# --- precedence -------------------------------------------------------------------


def test_flag_beats_config_beats_default(tmp_path, capsys):
    path = tmp_path / "c.cfg"
    path.write_text("[attack]\niters = 7\nalpha = 2/255\n")
    assert main(["attack", "--config", str(path), "--attack-iters", "9", "--print-effective-config"]) == 0
    cfg = parse_config(capsys.readouterr().out)
    assert cfg.attack.iters == 9
    assert cfg.attack.alpha == 2 / 255
    assert cfg.attack.theta == 10


def test_environment_output_dir(tmp_path, monkeypatch, capsys):
    path = tmp_path / "c.cfg"
    path.write_text('[run]\noutput_dir = "from-file"\n')
    monkeypatch.setenv("FREQALIGN_OUTPUT_DIR", "from-env")
    main(["attack", "--config", str(path), "--print-effective-config"])
    assert parse_config(capsys.readouterr().out).output_dir == "from-env"
    main(["attack", "--config", str(path), "--run-output-dir", "from-flag", "--print-effective-config"])
    assert parse_config(capsys.readouterr().out).output_dir == "from-flag"


def test_bad_flag_value_exits_2(capsys):
    assert main(["attack", "--attack-epsilon", "abc"]) == 2
    assert "attack.epsilon" in capsys.readouterr().err


# --- commands ---------------------------------------------------------------------


def test_zero_iterations_reproduces_source(tmp_path):
    src = np.random.default_rng(0).uniform(0, 1, (8, 8, 3))
    save_ppm(tmp_path / "src.ppm", src)
    save_ppm(tmp_path / "tgt.ppm", smooth_image(1, (8, 8, 3)))
    cfg = tmp_path / "one.cfg"
    cfg.write_text(SMALL + '\n[[pair]]\nsource = "src.ppm"\ntarget = "tgt.ppm"\n')
    out = tmp_path / "out"
    assert main(["attack", "--config", str(cfg), "--attack-iters", "0", "--run-output-dir", str(out)]) == 0
    expected = load_ppm(tmp_path / "src.ppm")
    assert np.array_equal(load_tensor(out / "adv" / "pair_000.frat"), expected)
    assert (out / "adv" / "pair_000.ppm").read_bytes() == (tmp_path / "src.ppm").read_bytes()


def test_attack_outputs(tmp_path, small_config):
    out = tmp_path / "out"
    assert main(["attack", "--config", str(small_config), "--run-output-dir", str(out)]) == 0
    rows = read_rows(out / "metrics.csv")
    assert len(rows) == 2 * 4  # pairs x (none + 3 defenses) x 1 holdout
    assert all(r["budget_violations"] == "0" and r["range_ok"] == "1" for r in rows)
    assert all(float(r["linf"]) <= 16 / 255 for r in rows)
    summary = read_rows(out / "summary.csv")
    assert [r["defense"] for r in summary] == ["none", "jpeg-q75", "gaussian-k5-s0.5", "center-crop-r0.9"]
    assert parse_config((out / "effective_config.txt").read_text()).output_dir == str(out)
    assert len((out / "traces" / "pair_001.jsonl").read_text().splitlines()) == 3
    assert not (out / "failures.txt").exists()


def test_missing_pair_file_is_reported_not_fatal(tmp_path, small_config):
    save_ppm(tmp_path / "ok.ppm", smooth_image(1, (8, 8, 3)))
    cfg = tmp_path / "c.cfg"
    cfg.write_text(SMALL + '\n[[pair]]\nsource = "ok.ppm"\ntarget = "ok2.ppm"\n[[pair]]\nsource = "ok.ppm"\ntarget = "ok.ppm"\n')
    out = tmp_path / "out"
    assert main(["attack", "--config", str(cfg), "--run-output-dir", str(out), "--no-defenses"]) == 0
    assert "pair 0" in (out / "failures.txt").read_text()
    assert {r["pair"] for r in read_rows(out / "metrics.csv")} == {"1"}


@pytest.mark.parametrize(
    "param,values,expected",
    [
        ("fgr.p", "[0.5, 1.0, 1.5, 2.0, 2.5, 3.0]", [0.5, 1.0, 1.5, 2.0, 2.5, 3.0]),
        ("attack.epsilon", "[4/255, 8/255, 16/255, 32/255]", [4 / 255, 8 / 255, 16 / 255, 32 / 255]),
    ],
)
def test_sweep_rows(tmp_path, small_config, param, values, expected):
    out = tmp_path / "sweep"
    args = ["sweep", "--config", str(small_config), "--run-output-dir", str(out), "--attack-iters", "2"]
    assert main(args + ["--sweep-param", param, "--sweep-values", values]) == 0
    summary = read_rows(out / "sweep_summary.csv")
    assert [float(r["value"]) for r in summary] == pytest.approx(expected)
    metrics = read_rows(out / "sweep_metrics.csv")
    pairs_per_row = {}
    for r in metrics:
        pairs_per_row.setdefault(r["row"], []).append((r["pair"], r["source"], r["target"]))
    assert len(pairs_per_row) == len(expected)
    assert len({tuple(v) for v in pairs_per_row.values()}) == 1
    # only the swept key differs between row configs
    texts = [(out / f"row_{i:02d}" / "effective_config.txt").read_text().splitlines() for i in range(len(expected))]
    for other in texts[1:]:
        diff = [a for a, b in zip(texts[0], other) if a != b]
        assert len(diff) == 1 and diff[0].startswith(param.split(".")[1] + " = ")


def test_sweep_without_param_is_an_error(small_config, capsys):
    assert main(["sweep", "--config", str(small_config)]) == 2


def test_parallelism_does_not_change_outputs(tmp_path, small_config):
    outs = []
    for par in (1, 4, 1):
        out = tmp_path / f"p{par}_{len(outs)}"
        args = ["sweep", "--config", str(small_config), "--run-output-dir", str(out), "--run-parallelism", str(par)]
        assert main(args + ["--sweep-param", "fgr.p", "--sweep-values", "[0.5, 3.0]"]) == 0
        outs.append(out)
    for name in ("sweep_metrics.csv", "sweep_summary.csv", "row_01/metrics.csv"):
        contents = {(o / name).read_bytes() for o in outs}
        assert len(contents) == 1, name


def test_defend_eval_reads_previous_run(tmp_path, small_config):
    adv_dir = tmp_path / "adv"
    main(["attack", "--config", str(small_config), "--run-output-dir", str(adv_dir), "--no-defenses"])
    out = tmp_path / "def"
    assert main(["defend-eval", "--config", str(small_config), "--run-output-dir", str(out), "--adversarial-dir", str(adv_dir)]) == 0
    rows = read_rows(out / "defense_metrics.csv")
    assert {r["defense"] for r in rows} == {"none", "jpeg-q75", "gaussian-k5-s0.5", "center-crop-r0.9"}
    attack_rows = read_rows(adv_dir / "metrics.csv")
    # undefended similarities agree with the attack run
    assert [r["sim_adv_target"] for r in rows if r["defense"] == "none"] == [r["sim_adv_target"] for r in attack_rows]


def test_energy_map_command(tmp_path, capsys):
    save_ppm(tmp_path / "img.ppm", smooth_image(3))
    assert main(["energy-map", str(tmp_path / "img.ppm"), "--out", str(tmp_path / "m.frat")]) == 0
    emap = load_tensor(tmp_path / "m.frat")
    assert emap.shape == (8, 8)  # first default surrogate uses 4 x 4 patches on 32 x 32
    printed = np.loadtxt(capsys.readouterr().out.splitlines(), delimiter=",")
    np.testing.assert_allclose(printed, emap, atol=1e-6)


def test_selfcheck_command(capsys):
    assert main(["selfcheck"]) == 0
    out = capsys.readouterr().out
    assert out.count("[PASS]") == 5 and "[FAIL]" not in out
