import pytest

from cmllab.config import (DEFAULTS, ENV_OUT_DIR, ENV_THREADS, build_system, parse_int, parse_number,
                           resolve)
from cmllab.errors import ConfigError


@pytest.mark.parametrize("text", ["2^-16", "2**-16", "2 ^ (-16)", "2e-16h", "0x1p-16"])
def test_dyadic_literals_exact(text):
    assert parse_number(text) == 2.0 ** -16


def test_other_literals():
    assert parse_number("1e7") == 1e7
    assert parse_number("1/3") == 1 / 3
    assert parse_number("12") == 12 and isinstance(parse_number("12"), int)
    assert parse_int("1e6") == 1_000_000
    with pytest.raises(ConfigError):
        parse_int("1.5")
    with pytest.raises(ConfigError):
        parse_number("two")
    with pytest.raises(ConfigError):
        parse_number(True)


def _write(tmp_path, text):
    p = tmp_path / "run.toml"
    p.write_text(text)
    return p


def test_defaults_untouched():
    cfg = resolve(environ={})
    assert cfg == DEFAULTS
    assert cfg is not DEFAULTS


# (file value, env value, flag value, expected)
PRECEDENCE = [
    (None, None, None, 1),
    (2, None, None, 2),
    (None, "3", None, 3),
    (None, None, "4", 4),
    (2, "3", None, 3),
    (2, None, "4", 4),
    (None, "3", "4", 4),
    (2, "3", "4", 4),
]


@pytest.mark.parametrize("file_v,env_v,flag_v,expected", PRECEDENCE)
def test_precedence_matrix(tmp_path, file_v, env_v, flag_v, expected):
    path = _write(tmp_path, f"[run]\nthreads = {file_v}\n") if file_v is not None else None
    env = {ENV_THREADS: env_v} if env_v is not None else {}
    flags = {"run": {"threads": flag_v}} if flag_v is not None else None
    assert resolve(path, flags, env)["run"]["threads"] == expected


def test_out_dir_env(tmp_path):
    path = _write(tmp_path, '[run]\nout_dir = "from-file"\n')
    assert resolve(path, environ={ENV_OUT_DIR: "from-env"})["run"]["out_dir"] == "from-env"
    assert resolve(path, environ={})["run"]["out_dir"] == "from-file"


def test_file_literals(tmp_path):
    path = _write(tmp_path, '[curve]\ndelta1 = "2^-16"\n[orbit]\nsteps = "1e7"\n'
                            '[coupling]\nA = [[-1, 1], [1, -1]]\nc = "1/4"\n')
    cfg = resolve(path, environ={})
    assert cfg["curve"]["delta1"] == 2.0 ** -16
    assert cfg["orbit"]["steps"] == 10_000_000
    s = build_system(cfg)
    assert s.c == 0.25 and s.m == 2


@pytest.mark.parametrize("text,match", [
    ("[nope]\nx = 1\n", "unknown section"),
    ("[orbit]\nstepz = 1\n", "unknown key"),
    ("[orbit\n", "invalid TOML"),
    ("[run]\nthreads = 0\n", "threads"),
    ('[run]\nformat = "xml"\n', "format"),
])
def test_bad_files(tmp_path, text, match):
    with pytest.raises(ConfigError, match=match):
        resolve(_write(tmp_path, text), environ={})


def test_missing_file(tmp_path):
    with pytest.raises(ConfigError, match="not found"):
        resolve(tmp_path / "absent.toml", environ={})


def test_build_system_variants():
    flags = {"map": {"variant": "perturbed", "s0": 0.05, "coefficients": ["-2e-5", "1e-5"]}}
    cfg = resolve(None, flags, {})
    assert type(build_system(cfg).map).__name__ == "PerturbedTent"
    cfg = resolve(None, {"coupling": {"A": "all-to-all", "m": 4}}, {})
    assert build_system(cfg).m == 4
    with pytest.raises(ConfigError):
        build_system(resolve(None, {"coupling": {"A": "two-node", "m": 3}}, {}))
    with pytest.raises(ConfigError):
        build_system(resolve(None, {"map": {"variant": "logistic"}}, {}))
