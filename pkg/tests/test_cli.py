import json

import pytest

from hybridsyn.cli import EXIT_NO_CERT, EXIT_OK, EXIT_PARSE, EXIT_REFUTED, build_parser, main

PEND = "pendulum.cert"
FLIPPED = """# problem: sys5_ct
V = -14.4983 + 23.06*s1^2 + 11.6469*s1*s2 + 17.9399*s2^2
kappa1 = 11.0776*y1 + 9.32858*y2
"""


def test_check_printed_pendulum(tmp_path, capsys):
    assert main(["check", "sys5_ct", PEND, "--out-dir", str(tmp_path)]) == EXIT_OK
    assert "all proved" in capsys.readouterr().out
    rep = json.loads((tmp_path / "check.json").read_text())
    assert rep["spec"] == "rws" and all(r["status"] == "proved" for r in rep["verdicts"])


def test_check_wrong_sign_controller_is_refuted(tmp_path):
    cert = tmp_path / "flip.cert"
    cert.write_text(FLIPPED)
    assert main(["check", "sys5_ct", str(cert), "--timeout", "5"]) == EXIT_REFUTED


def test_parse_errors_exit_2(tmp_path, capsys):
    bad = tmp_path / "bad.cert"
    bad.write_text("V = s1 +* 2\nkappa1 = 0\n")
    assert main(["check", "sys5_ct", str(bad)]) == EXIT_PARSE
    assert "error" in capsys.readouterr().err
    prob = tmp_path / "bad.toml"
    prob.write_text("[partition]\nnx = 1\n[flow]\nf = ['s1 +']\n")
    assert main(["synthesize", str(prob)]) == EXIT_PARSE
    assert main(["check", "no_such_problem", PEND]) == EXIT_PARSE


def test_simulate_x0_outside_domain_exits_2():
    assert main(["simulate", "hysteresis", "hysteresis.cert", "--x0", "3,0.5"]) == EXIT_PARSE


def test_synthesis_without_certificate_exits_3(tmp_path):
    assert main(["synthesize", "sys4_ct", "--max-generations", "1", "--seed", "0", "--quiet",
                 "--out-dir", str(tmp_path)]) == EXIT_NO_CERT
    rep = json.loads((tmp_path / "run_0" / "report.json").read_text())
    assert rep["outcome"] == "best-effort"
    assert (tmp_path / "aggregate.json").exists() and (tmp_path / "aggregate.csv").exists()


def test_synthesis_reruns_are_byte_identical(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    for d in (a, b):
        assert main(["synthesize", "sys1_ct", "--runs", "1", "--seed", "7", "--quiet", "--out-dir", str(d)]) == EXIT_OK
    for name in ("report.json", "certificate.txt"):
        assert (a / "run_7" / name).read_bytes() == (b / "run_7" / name).read_bytes()
    cert = (a / "run_7" / "certificate.txt").read_text()
    assert "# problem_hash:" in cert and "# verdicts:" in cert and "V = " in cert


def test_synthesized_certificate_checks(tmp_path):
    assert main(["synthesize", "sys1_ct", "--seed", "1", "--quiet", "--out-dir", str(tmp_path)]) == EXIT_OK
    assert main(["check", "sys1_ct", str(tmp_path / "run_1" / "certificate.txt")]) == EXIT_OK


def test_check_reach_and_stay_with_beta():
    assert main(["check", "sys5_ct", PEND, "--spec", "rsws", "--beta", "-14.0381"]) == EXIT_OK
    assert main(["check", "sys5_ct", PEND, "--spec", "rsws", "--beta", "1e6", "--timeout", "5"]) == EXIT_REFUTED


def test_simulate_writes_outputs(tmp_path):
    assert main(["simulate", "sys5_ct", PEND, "--runs", "5", "--plots", "--out-dir", str(tmp_path)]) == EXIT_OK
    rep = json.loads((tmp_path / "validation.json").read_text())
    assert rep["violations"] == 0
    assert (tmp_path / "phase.svg").exists()
    assert main(["simulate", "sys5_ct", PEND, "--x0", "0.3,0.2", "--out-dir", str(tmp_path)]) == EXIT_OK
    assert (tmp_path / "arc.csv").exists()


def test_list(capsys):
    assert main(["list"]) == EXIT_OK
    assert "sys1_ct" in capsys.readouterr().out


def test_parser_flags():
    args = build_parser().parse_args(["check", "p", "c", "--timeout", "3", "--delta", "0.01", "--spec", "rsws",
                                      "--workers", "2", "--find-beta"])
    assert (args.timeout, args.delta, args.spec, args.workers, args.find_beta) == (3.0, 0.01, "rsws", 2, True)
    with pytest.raises(SystemExit):
        build_parser().parse_args(["check", "p", "c", "--spec", "ltl"])
