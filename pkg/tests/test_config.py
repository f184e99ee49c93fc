import pytest

from bundleflow.config import ConfigError, RunConfig, emit_config, parse_config

MINIMAL = """\
# Sol stability, everything else defaulted
experiment = "stability"
initial.soliton = "sol"
"""


def test_minimal_config_is_fully_defaulted():
    cfg = parse_config(MINIMAL)
    assert cfg.domain_dim == 1 and cfg.domain_sizes == (256,)
    assert cfg.initial_X == (-2.0, 2.0) and cfg.fiber_N == 2
    assert cfg.domain_holonomy is not None
    assert cfg.run_horizon == 16.0
    assert None not in (cfg.domain_mode, cfg.domain_periods, cfg.domain_curvature)


@pytest.mark.parametrize("text", [
    MINIMAL,
    'experiment = "monotonicity"\ninitial.soliton = "nil"\ndomain.periods = [4.0, 4.0]\n',
    'experiment = "blowdown"\nrun.scales = [1, 2, 8]\n',
    'experiment = "oracle"\nseed = 18446744073709551615\n',
    'experiment = "tracking"\ninitial.soliton = "h3"\n',
    'initial.soliton = "flat"\nstep.dt_max = 0.5\noutput.dir = "a # not a comment"\n',
])
def test_round_trip(text):
    cfg = parse_config(text)
    canon = emit_config(cfg)
    assert parse_config(canon) == cfg
    assert emit_config(parse_config(canon)) == canon


def test_emit_lists_every_key():
    canon = emit_config(parse_config(MINIMAL))
    keys = [ln.split(" = ")[0] for ln in canon.splitlines() if ln]
    assert len(keys) == len(set(keys)) == len(RunConfig.__dataclass_fields__)


def test_unknown_key_reports_line():
    with pytest.raises(ConfigError) as exc:
        parse_config(MINIMAL + "run.horizn = 3\n")
    assert exc.value.line == 4 and exc.value.key == "run.horizn"
    assert "line 4" in str(exc.value)


def test_bad_json_and_missing_equals():
    with pytest.raises(ConfigError, match="line 1"):
        parse_config("seed = twelve\n")
    with pytest.raises(ConfigError, match="line 2"):
        parse_config("seed = 1\nexperiment\n")


@pytest.mark.parametrize("line,match", [
    ("domain.holonomy = [[2, 0], [0, 1]]", "determinant"),
    ("domain.holonomy = [[1, 0], [0, 1]]", "does not match"),
    ("fiber.N = 3", "fiber dimension"),
    ("seed = -1", "unsigned"),
    ("initial.eps = -0.1", "nonnegative"),
    ("run.horizon = 0.5", "horizon"),
    ("run.functional = \"Q\"", "functional"),
    ("experiment = \"dance\"", "experiment"),
    ("domain.sizes = [64, 64]", "line 4, key 'domain.sizes'"),
    ("seed = true", "boolean"),
])
def test_invalid_values_are_rejected(line, match):
    with pytest.raises(ConfigError, match=match):
        parse_config(MINIMAL + line + "\n")


def test_overrides_win_and_are_located():
    cfg = parse_config(MINIMAL, ["seed=7", "initial.eps=0.05"])
    assert cfg.seed == 7 and cfg.initial_eps == 0.05
    with pytest.raises(ConfigError, match="override 1"):
        parse_config(MINIMAL, ["bogus.key=1"])
    with pytest.raises(ConfigError):
        parse_config(MINIMAL, ["seed"])


def test_checkpoint_source_needs_existing_path(tmp_path):
    text = MINIMAL + 'initial.source = "checkpoint"\n'
    with pytest.raises(ConfigError, match="initial.checkpoint"):
        parse_config(text)
    missing = str(tmp_path / "nope.zip")
    with pytest.raises(ConfigError, match="does not exist"):
        parse_config(text + f'initial.checkpoint = "{missing}"\n')
    cfg = parse_config(text + f'initial.checkpoint = "{missing}"\n', check_paths=False)
    assert cfg.initial_checkpoint == missing


def test_derived_objects():
    cfg = parse_config('initial.soliton = "nil"\ndomain.sizes = [16, 16]\nstep.safety = 0.1\n')
    assert cfg.domain().sizes == (16, 16)
    assert cfg.soliton_spec().kind == "nil"
    assert cfg.step_control().safety == 0.1
