import json

import numpy as np
import pytest

from peerenc.cli import main
from peerenc.population import load_population


def write_config(path, **overrides):
    cfg = {
        "seed": 424242,
        "dgp": {
            "blocks": 4,
            "block_size": 3,
            "strata": {"always_taker": 0.0, "complier": 1.0, "never_taker": 0.0,
                       "defier": 0.0},
            "outcome": {"representation": "structural", "direct": 2.0, "peer": 0.4,
                        "interaction": 0.2, "noise_sd": 0.5},
        },
        "mechanisms": [{"name": "phi", "p": 0.7}, {"name": "psi", "p": 0.3}],
        "design": {"mech_a": "phi", "mech_b": "psi", "k": 2},
        "mc": {"replications": 60},
    }
    for key, value in overrides.items():
        if isinstance(value, dict) and isinstance(cfg.get(key), dict):
            cfg[key].update(value)
        else:
            cfg[key] = value
    path.write_text(json.dumps(cfg))
    return path


def test_generate_writes_population_and_summary(tmp_path, capsys):
    cfg = write_config(tmp_path / "cfg.json")
    out = tmp_path / "pop.json"
    assert main(["generate", "--config", str(cfg), "--out", str(out)]) == 0
    text = capsys.readouterr().out
    assert "monotone=True" in text and "block 0" in text
    pop = load_population(out)
    assert pop.n_blocks == 4


def test_generate_deterministic_bytes(tmp_path):
    cfg = write_config(tmp_path / "cfg.json")
    a = tmp_path / "a.json"
    b = tmp_path / "b.json"
    assert main(["generate", "--config", str(cfg), "--out", str(a)]) == 0
    assert main(["generate", "--config", str(cfg), "--out", str(b)]) == 0
    assert a.read_bytes() == b.read_bytes()
    c = tmp_path / "c.json"
    assert main(["generate", "--config", str(cfg), "--seed", "7", "--out", str(c)]) == 0
    assert c.read_bytes() != a.read_bytes()


def test_generate_rejects_defiers_with_monotone_flag(tmp_path, capsys):
    cfg = write_config(
        tmp_path / "cfg.json",
        dgp={
            "blocks": 4,
            "block_size": 3,
            "strata": {"always_taker": 0.1, "complier": 0.5, "never_taker": 0.3,
                       "defier": 0.1},
            "monotone": True,
        },
    )
    assert main(["generate", "--config", str(cfg)]) == 2
    assert "InvalidConfig" in capsys.readouterr().err


def test_generate_requires_seed(tmp_path, capsys):
    path = tmp_path / "cfg.json"
    cfg = json.loads(write_config(path).read_text())
    del cfg["seed"]
    path.write_text(json.dumps(cfg))
    with pytest.raises(SystemExit) as exc:
        main(["generate", "--config", str(path)])
    assert exc.value.code == 2
    assert "seed" in capsys.readouterr().err


def test_bad_json_reports_line(tmp_path, capsys):
    path = tmp_path / "cfg.json"
    path.write_text("{\n  \"seed\": 1,\n  oops\n}")
    with pytest.raises(SystemExit):
        main(["generate", "--config", str(path)])
    assert "line 3" in capsys.readouterr().err


def test_estimands_no_interference_zero_peer_rows(tmp_path):
    cfg = write_config(
        tmp_path / "cfg.json",
        dgp={
            "blocks": 3,
            "block_size": 3,
            "strata": {"complier": 0.6, "never_taker": 0.4},
            "outcome": {"representation": "structural", "direct": 2.0},
        },
    )
    pop_path = tmp_path / "pop.json"
    main(["generate", "--config", str(cfg), "--out", str(pop_path)])
    out = tmp_path / "report.json"
    assert main(["estimands", "--config", str(cfg), "--pop", str(pop_path),
                 "--out", str(out)]) == 0
    report = json.loads(out.read_text())
    for key, entry in report["entries"].items():
        if key.startswith(("pitt", "lpt")):
            assert abs(entry["population"]) <= 1e-12, key


def test_estimands_singleton_blocks_equal_raw_outcomes(tmp_path):
    cfg = write_config(
        tmp_path / "cfg.json",
        dgp={
            "blocks": 2,
            "block_size": 1,
            "strata": {"complier": 1.0},
            "outcome": {"representation": "structural", "direct": 2.0},
        },
    )
    pop_path = tmp_path / "pop.json"
    main(["generate", "--config", str(cfg), "--out", str(pop_path)])
    out = tmp_path / "report.json"
    main(["estimands", "--config", str(cfg), "--pop", str(pop_path), "--out", str(out)])
    entries = json.loads(out.read_text())["entries"]
    assert entries["ybar_itt[z=1,mech=phi]"]["per_block"] == [2.0, 2.0]
    assert entries["ybar_itt[z=0,mech=phi]"]["per_block"] == [0.0, 0.0]


def test_estimands_formats(tmp_path, capsys):
    cfg = write_config(tmp_path / "cfg.json")
    pop_path = tmp_path / "pop.json"
    main(["generate", "--config", str(cfg), "--out", str(pop_path)])
    capsys.readouterr()
    assert main(["estimands", "--config", str(cfg), "--pop", str(pop_path),
                 "--format", "csv"]) == 0
    csv_text = capsys.readouterr().out
    assert csv_text.splitlines()[0] == "estimand,block,value"
    assert main(["estimands", "--config", str(cfg), "--pop", str(pop_path),
                 "--format", "text"]) == 0
    assert "et[1,0]" in capsys.readouterr().out


def test_simulate_writes_summary_and_data(tmp_path):
    cfg = write_config(tmp_path / "cfg.json")
    pop_path = tmp_path / "pop.json"
    main(["generate", "--config", str(cfg), "--out", str(pop_path)])
    out = tmp_path / "mc.json"
    data_csv = tmp_path / "data.csv"
    assert main(["simulate", "--config", str(cfg), "--pop", str(pop_path),
                 "--out", str(out), "--dump-data", str(data_csv)]) == 0
    summary = json.loads(out.read_text())
    assert summary["replications"] == 60
    names = {e["name"] for e in summary["estimators"]}
    assert "ditt_hat_a" in names and "ldt_hat" in names
    header = data_csv.read_text().splitlines()[0]
    assert header == "block_id,S,unit_id,Z,D,Y"


def test_verify_all_complier_population_passes(tmp_path):
    cfg = write_config(tmp_path / "cfg.json")
    pop_path = tmp_path / "pop.json"
    main(["generate", "--config", str(cfg), "--out", str(pop_path)])
    out = tmp_path / "verify.json"
    assert main(["verify", "--config", str(cfg), "--pop", str(pop_path),
                 "--out", str(out)]) == 0
    report = json.loads(out.read_text())
    names = {t["name"] for t in report["theorems"]}
    assert {"theorem_1", "theorem_2", "theorem_3[z=0]", "theorem_3[z=1]"} <= names
    assert all(t["identity"]["passed"] for t in report["theorems"])


def test_verify_defier_population_gate(tmp_path):
    cfg = write_config(
        tmp_path / "cfg.json",
        dgp={
            "blocks": 4,
            "block_size": 5,
            "strata": {"always_taker": 0.2, "complier": 0.4, "never_taker": 0.2,
                       "defier": 0.2},
            "outcome": {"representation": "structural", "direct": [2.0, 1.0],
                        "peer": [0.5, 0.3], "interaction": [0.4, 0.2],
                        "noise_sd": 0.5},
        },
    )
    pop_path = tmp_path / "pop.json"
    main(["generate", "--config", str(cfg), "--out", str(pop_path)])
    assert main(["verify", "--config", str(cfg), "--pop", str(pop_path)]) == 1
    assert main(["verify", "--config", str(cfg), "--pop", str(pop_path),
                 "--expect-fail", "thm1", "thm2", "thm3"]) == 0


def test_verify_text_format(tmp_path, capsys):
    cfg = write_config(tmp_path / "cfg.json")
    pop_path = tmp_path / "pop.json"
    main(["generate", "--config", str(cfg), "--out", str(pop_path)])
    assert main(["verify", "--config", str(cfg), "--pop", str(pop_path),
                 "--format", "text"]) == 0
    out = capsys.readouterr().out
    assert "theorem_1" in out and "pass" in out


def test_generate_then_load_reproduces_estimands_bitwise(tmp_path):
    from peerenc import _streams
    from peerenc.cli import _parse_dgp
    from peerenc.estimands import compute_estimand_report
    from peerenc.mechanisms import Mechanism
    from peerenc.population import build_population

    cfg_path = write_config(tmp_path / "cfg.json")
    pop_path = tmp_path / "pop.json"
    main(["generate", "--config", str(cfg_path), "--out", str(pop_path)])
    cfg = json.loads(cfg_path.read_text())
    in_memory = build_population(_parse_dgp(cfg), _streams.stream(cfg["seed"], 0))
    a = Mechanism("phi", 0.7)
    b = Mechanism("psi", 0.3)
    from_file = load_population(pop_path)
    assert compute_estimand_report(from_file, a, b).to_json() == \
        compute_estimand_report(in_memory, a, b).to_json()


def test_threads_env_fallback(tmp_path, monkeypatch):
    cfg = write_config(tmp_path / "cfg.json")
    pop_path = tmp_path / "pop.json"
    main(["generate", "--config", str(cfg), "--out", str(pop_path)])
    out_env = tmp_path / "env.json"
    out_flag = tmp_path / "flag.json"
    monkeypatch.setenv("PEERENC_THREADS", "3")
    assert main(["simulate", "--config", str(cfg), "--pop", str(pop_path),
                 "--out", str(out_env)]) == 0
    monkeypatch.delenv("PEERENC_THREADS")
    assert main(["simulate", "--config", str(cfg), "--pop", str(pop_path),
                 "--threads", "3", "--out", str(out_flag)]) == 0
    assert out_env.read_bytes() == out_flag.read_bytes()


def test_duplicate_mechanism_names_rejected(tmp_path, capsys):
    cfg = write_config(
        tmp_path / "cfg.json",
        mechanisms=[{"name": "phi", "p": 0.7}, {"name": "phi", "p": 0.3}],
    )
    pop_path = tmp_path / "pop.json"
    main(["generate", "--config", str(cfg), "--out", str(pop_path)])
    with pytest.raises(SystemExit) as exc:
        main(["estimands", "--config", str(cfg), "--pop", str(pop_path)])
    assert exc.value.code == 2
    assert "more than once" in capsys.readouterr().err
