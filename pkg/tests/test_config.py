import pytest

from sedic.utils.config import SedicConfig, apply_overrides, load_config


def write(tmp_path, text: str) -> str:
    path = tmp_path / "sedic.toml"
    path.write_text(text)
    return str(path)


def test_defaults():
    config = load_config()
    assert config == SedicConfig()
    assert config.mode == "mock"
    assert config.encode.target_bpp == 0.025
    assert config.decode.steps == 50 and config.decode.guidance_threshold is None


def test_file_values_and_shared_backend_keys(tmp_path):
    config = load_config(write(tmp_path, """
[backend]
mode = "http"
timeout = 12
retries = 1

[backend.captioner]
endpoint = "https://api.example.org/v1"
model = "vision-large"
timeout = 60

[encode]
target_bpp = 0.045
mask_factor = 4

[decode]
steps = 20
eta = 0.5
"""))
    assert config.mode == "http"
    assert config.services["captioner"].timeout == 60
    assert config.services["captioner"].model == "vision-large"
    assert config.services["detector"].timeout == 12
    assert config.services["detector"].retries == 1
    assert config.services["detector"].endpoint is None
    assert config.encode.mask_factor == 4
    assert (config.decode.steps, config.decode.eta) == (20, 0.5)


@pytest.mark.parametrize(
    "text",
    [
        "[encode]\ntarget = 0.1\n",
        "[backend]\nproxy = 'x'\n",
        "[backend.captioner]\nurl = 'x'\n",
        "[backend]\ntimeout = 0\n",
        "not toml = = =\n",
    ],
)
def test_invalid_files(tmp_path, text):
    with pytest.raises(ValueError):
        load_config(write(tmp_path, text))


def test_missing_file(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_config(str(tmp_path / "absent.toml"))


def test_overrides_win(tmp_path):
    config = load_config(write(tmp_path, "[decode]\nsteps = 20\nseed = 4\n"))
    config = apply_overrides(config, steps=8, seed=None, target_bpp=0.03, mode="mock")
    assert config.decode.steps == 8
    assert config.decode.seed == 4
    assert config.encode.target_bpp == 0.03
    with pytest.raises(ValueError):
        apply_overrides(config, colour="red")
