import json

import numpy as np
import pytest

from chanmdp.cli import EXIT_CONFIG, EXIT_IO, EXIT_OK, EXIT_SOLVER, main


def run(tmp_path, *args, config=None):
    argv = list(args) + ["--out-dir", str(tmp_path)]
    if config is not None:
        tmp_path.mkdir(parents=True, exist_ok=True)
        p = tmp_path / "cfg.json"
        p.write_text(json.dumps(config))
        argv += ["--config", str(p)]
    return main(argv)


def read_csv(path):
    lines = path.read_text().splitlines()
    assert lines[0].startswith("# schema:")
    return [l.split(",") for l in lines[1:]]


def test_design_filter_outputs_and_determinism(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert run(a, "design-filter") == EXIT_OK
    assert run(b, "design-filter") == EXIT_OK
    coeffs = (a / "prototype_coefficients.txt").read_text().splitlines()
    assert len(coeffs) == 64
    rows = read_csv(a / "channel_response.csv")
    assert rows[0] == ["freq"] + [f"ch{m}" for m in range(8)]
    for name in ("prototype_coefficients.txt", "channel_response.csv", "channel_response.svg"):
        assert (a / name).read_bytes() == (b / name).read_bytes()


def test_design_filter_infeasible_exit(tmp_path):
    cfg = {"filter": {"passband_edge": 0.0525, "stopband_edge": 0.0725}}
    assert run(tmp_path, "design-filter", config=cfg) == EXIT_CONFIG


def test_solve_policy_size_and_counts(tmp_path):
    assert run(tmp_path, "solve") == EXIT_OK
    raw = (tmp_path / "policy.mpol").read_bytes()
    assert len(raw) == 1664 + 13
    man = json.loads((tmp_path / "solve.manifest.json").read_text())
    assert man["stm_elements"]["factored"] == 66394
    assert man["solver"]["converged"]
    assert len(man["config_hash"]) == 64
    for p in man["artifacts"].values():
        assert (tmp_path / p.split("/")[-1]).exists()
    assert run(tmp_path, "solve", "--no-transition-states") == EXIT_OK
    man = json.loads((tmp_path / "solve.manifest.json").read_text())
    assert man["stm_elements"]["factored"] == 66020


def test_solve_non_convergence(tmp_path):
    assert run(tmp_path, "solve", config={"solver": {"max_iter": 2}}) == EXIT_SOLVER
    man = json.loads((tmp_path / "solve.manifest.json").read_text())
    assert man["solver"]["converged"] is False and man["solver"]["final_residual"] > 0


def test_config_and_io_errors(tmp_path):
    assert run(tmp_path, "solve", config={"weights": [0.9, 0.9]}) == EXIT_CONFIG
    assert run(tmp_path, "solve", config={"nonsense": 1}) == EXIT_CONFIG
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert main(["solve", "--config", str(bad), "--out-dir", str(tmp_path)]) == EXIT_CONFIG
    assert main(["solve", "--config", str(tmp_path / "missing.json"),
                 "--out-dir", str(tmp_path)]) == EXIT_IO
    (tmp_path / "junk.mpol").write_bytes(b"junk")
    assert main(["simulate", "--policy", str(tmp_path / "junk.mpol"),
                 "--out-dir", str(tmp_path)]) == EXIT_IO


def test_build_model_13_actions(tmp_path):
    assert run(tmp_path, "build-model", "--actions", "13") == EXIT_OK
    man = json.loads((tmp_path / "build-model.manifest.json").read_text())
    assert man["model"]["n_actions"] == 13
    assert (tmp_path / "model.fmdp").read_bytes()[:4] == b"FMDP"


def test_simulate_with_saved_policy(tmp_path):
    cfg = {"n_frames": 800}
    assert run(tmp_path, "solve", config=cfg) == EXIT_OK
    assert run(tmp_path, "simulate", "--policy", str(tmp_path / "policy.mpol"), config=cfg) == EXIT_OK
    m1 = (tmp_path / "metrics.csv").read_text()
    assert run(tmp_path, "simulate", config=cfg) == EXIT_OK
    assert (tmp_path / "metrics.csv").read_text() == m1
    rows = read_csv(tmp_path / "trace.csv")
    assert rows[0] == "frame,cr_hex,cf1,cf2,action,served,requested,power_w".split(",")
    assert len(rows) == 801


def test_simulate_seed_flag_changes_trace(tmp_path):
    cfg = {"n_frames": 300}
    run(tmp_path / "a", "simulate", "--controller", "dftfb", "--seed", "1", config=cfg)
    run(tmp_path / "b", "simulate", "--controller", "dftfb", "--seed", "2", config=cfg)
    assert (tmp_path / "a/trace.csv").read_text() != (tmp_path / "b/trace.csv").read_text()


def test_compare_row_count_and_front(tmp_path):
    cfg = {"n_frames": 3000, "sweep": {"family": "IID", "betas": [0.1, 0.3],
                                       "r1": [0.2, 0.5, 0.9]}}
    assert run(tmp_path, "compare", config=cfg) == EXIT_OK
    rows = read_csv(tmp_path / "compare.csv")
    header, body = rows[0], rows[1:]
    assert len(body) == (8 + 3 + 2) * 2
    col = {h: i for i, h in enumerate(header)}
    dftfb = [r for r in body if r[col["controller"]] == "DFTFB"]
    assert all(float(r[col["success_rate"]]) == 1.0 for r in dftfb)
    assert len(list(tmp_path.glob("pareto_*.svg"))) == 2


def test_transition_study_rows(tmp_path):
    cfg = {"n_frames": 1500}
    assert run(tmp_path, "transition-study", config=cfg) == EXIT_OK
    rows = read_csv(tmp_path / "transition_study.csv")
    assert len(rows) - 1 == 10
    assert (tmp_path / "transition_study.svg").exists()
