import json

import numpy as np
import pytest

from proxyforge.cli import main
from proxyforge.manifest import load_manifest
from proxyforge.tensors import load_tensor

TINY_CONFIG = {
    "scene": {"size": 32, "seed": 1},
    "model": {"classes": 6, "widths": [4, 6, 6], "disc_width": 4, "aspp_rates": [1, 2]},
    "train": {
        "batch_size": 2,
        "supervised_iters": 4,
        "adversarial_iters": 3,
        "proxy_iters": 4,
    },
}


@pytest.fixture()
def config(tmp_path):
    path = tmp_path / "config.json"
    path.write_text(json.dumps(TINY_CONFIG))
    return str(path)


def run(*argv):
    return main(list(argv))


class TestExitCodes:
    def test_no_command_is_usage_error(self, capsys):
        with pytest.raises(SystemExit) as exc:
            run()
        assert exc.value.code == 2

    def test_unknown_command_is_usage_error(self):
        with pytest.raises(SystemExit) as exc:
            run("frobnicate")
        assert exc.value.code == 2

    def test_missing_manifest_is_exit_3(self, tmp_path, capsys):
        code = run("proxy", "--manifest", str(tmp_path / "nope.txt"), "--out", str(tmp_path))
        assert code == 3
        assert capsys.readouterr().err.startswith("error: missing-input:")

    def test_bad_params_is_exit_4(self, tmp_path, config, capsys):
        assert run("--config", config, "synth", "--out", str(tmp_path / "d")) == 0
        code = run(
            "proxy",
            "--manifest",
            str(tmp_path / "d" / "manifest.txt"),
            "--out",
            str(tmp_path / "p"),
            "--p1",
            "1.5",
        )
        assert code == 4
        assert capsys.readouterr().err.startswith("error: validation:")

    def test_missing_config_file_is_exit_3(self, tmp_path):
        code = run("--config", str(tmp_path / "no.json"), "synth", "--out", str(tmp_path))
        assert code == 3

    def test_unknown_config_key_is_exit_4(self, tmp_path):
        path = tmp_path / "c.json"
        path.write_text('{"scene": {"bogus": 1}}')
        assert run("--config", str(path), "synth", "--out", str(tmp_path)) == 4

    def test_eval_without_mode_is_exit_4(self, tmp_path, config):
        run("--config", config, "synth", "--out", str(tmp_path / "d"))
        assert run("eval", "--manifest", str(tmp_path / "d" / "manifest.txt")) == 4


class TestSynth:
    def test_writes_dataset(self, tmp_path, config, capsys):
        code = run(
            "--config", config, "synth", "--out", str(tmp_path / "d"),
            "--n-source", "3", "--n-target", "2",
        )
        assert code == 0
        man = load_manifest(tmp_path / "d" / "manifest.txt")
        assert len(man.entries) == 3 + 2 + 2
        assert "7 manifest entries" in capsys.readouterr().out

    def test_seed_flag_controls_output(self, tmp_path, config):
        for seed, name in (("1", "a"), ("1", "b"), ("2", "c")):
            run(
                "--config", config, "--seed", seed, "synth",
                "--out", str(tmp_path / name), "--n-source", "1", "--n-target", "1",
            )
        img = "images/src_0000.ppm"
        a = (tmp_path / "a" / img).read_bytes()
        assert a == (tmp_path / "b" / img).read_bytes()
        assert a != (tmp_path / "c" / img).read_bytes()


class TestFullPipeline:
    def test_end_to_end(self, tmp_path, config, capsys):
        root = tmp_path / "d"
        manifest = str(root / "manifest.txt")
        base = ["--config", config, "--threads", "1"]
        assert run(*base, "synth", "--out", str(root), "--n-source", "3", "--n-target", "3") == 0
        assert run(
            *base, "train-adapt", "--manifest", manifest,
            "--checkpoint", str(tmp_path / "ckpt"),
            "--log-file", str(tmp_path / "train.log"),
        ) == 0
        assert (tmp_path / "train.log").is_file()
        assert run(
            *base, "infer", "--manifest", manifest,
            "--checkpoint", str(tmp_path / "ckpt"), "--out", str(root / "maps"),
        ) == 0
        # p1=1: at this tiny size discriminator maps are single pixels
        assert run(
            *base, "proxy", "--manifest", manifest, "--out", str(root / "proxies"),
            "--p1", "1.0", "--p2", "0.5",
        ) == 0
        assert (root / "proxies" / "report.json").is_file()
        assert run(
            *base, "train-proxy", "--manifest", manifest,
            "--checkpoint", str(tmp_path / "ckpt2"),
        ) == 0
        capsys.readouterr()
        assert run(
            *base, "eval", "--manifest", manifest,
            "--checkpoint", str(tmp_path / "ckpt2"), "--proxies",
        ) == 0
        out = capsys.readouterr().out
        assert "miou=" in out and "proxy_precision=" in out

        # updated manifest round-trips with all derived paths attached
        man = load_manifest(manifest)
        for e in man.by_role("target-train"):
            assert e.scoremap and e.d1 and e.d2 and e.proxy
            assert load_tensor(man.resolve(e.proxy)).data.dtype == np.uint8


def test_gradcheck_command(capsys):
    assert run("gradcheck") == 0
    assert "worst relative error" in capsys.readouterr().out
