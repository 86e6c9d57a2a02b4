import json

import pytest

from harvest import scenario as scn
from harvest.cli import EXIT_OK, EXIT_RUNTIME, EXIT_USAGE, main


@pytest.fixture()
def tiny_path(tiny_scenario, tmp_path):
    path = tmp_path / "tiny.json"
    scn.save(tiny_scenario, path)
    return str(path)


FAST_TRAIN = ["--updates", "2", "--set", "rollout_steps=32",
              "--set", "minibatch_size=16", "--set", "epochs=1",
              "--set", "num_envs=2", "--quiet"]


def run_train(tiny_path, out, extra=()):
    return main(["train", "--scenario", tiny_path, "--out", str(out),
                 *FAST_TRAIN, *extra])


class TestValidate:
    def test_builtin_ok(self, tmp_path, capsys):
        assert main(["validate", "--scenario", "builtin:config1",
                     "--out", str(tmp_path / "v")]) == EXIT_OK
        assert "OK" in capsys.readouterr().out
        assert (tmp_path / "v" / "manifest.json").exists()

    def test_invalid_scenario_exit_2(self, tiny_path, tmp_path, capsys):
        doc = json.loads(open(tiny_path).read())
        doc["targets"][0]["bandwidth"] = -1.0
        bad = tmp_path / "bad.json"
        bad.write_text(json.dumps(doc))
        assert main(["validate", "--scenario", str(bad),
                     "--out", str(tmp_path / "v")]) == EXIT_RUNTIME

    def test_manifest_written_before_failure(self, tmp_path):
        out = tmp_path / "v"
        assert main(["validate", "--scenario", "builtin:nope",
                     "--out", str(out)]) == EXIT_RUNTIME
        assert (out / "manifest.json").exists()


class TestUsageErrors:
    def test_unknown_command(self):
        assert main(["frobnicate"]) == EXIT_USAGE

    def test_missing_required_flag(self):
        assert main(["train"]) == EXIT_USAGE

    def test_bad_override_key(self, tiny_path, tmp_path):
        assert main(["train", "--scenario", tiny_path, "--out", str(tmp_path / "t"),
                     "--set", "bogus_key=1"]) == EXIT_USAGE

    def test_malformed_set_pair(self, tiny_path, tmp_path):
        assert main(["train", "--scenario", tiny_path, "--out", str(tmp_path / "t"),
                     "--set", "no_equals_sign"]) == EXIT_USAGE


class TestTrain:
    def test_artifacts(self, tiny_path, tmp_path):
        out = tmp_path / "t"
        assert run_train(tiny_path, out) == EXIT_OK
        for name in ("manifest.json", "policy.ckpt", "curve.csv", "result.json"):
            assert (out / name).exists(), name
        result = json.loads((out / "result.json").read_text())
        assert result["scheme"] == "lagrangian"
        assert not result["smooth"]

    def test_smooth_writes_adversary(self, tiny_path, tmp_path):
        out = tmp_path / "s"
        assert run_train(tiny_path, out, ["--smooth", "--eps", "0.05"]) == EXIT_OK
        assert (out / "adversary.ckpt").exists()
        assert json.loads((out / "result.json").read_text())["smooth"]

    def test_scheme_flag(self, tiny_path, tmp_path):
        out = tmp_path / "n"
        assert run_train(tiny_path, out, ["--scheme", "none"]) == EXIT_OK
        assert json.loads((out / "result.json").read_text())["scheme"] == "none"

    def test_out_dir_from_env(self, tiny_path, tmp_path, monkeypatch):
        monkeypatch.setenv("HARVEST_OUT", str(tmp_path / "envroot"))
        assert main(["train", "--scenario", tiny_path, *FAST_TRAIN]) == EXIT_OK
        runs = list((tmp_path / "envroot").iterdir())
        assert len(runs) == 1
        assert (runs[0] / "policy.ckpt").exists()


class TestEval:
    def test_end_to_end(self, tiny_path, tmp_path, capsys):
        train_out = tmp_path / "t"
        assert run_train(tiny_path, train_out) == EXIT_OK
        eval_out = tmp_path / "e"
        assert main(["eval", "--scenario", tiny_path,
                     "--checkpoint", str(train_out / "policy.ckpt"),
                     "--noise", "random", "--eps", "0.05", "--trials", "3",
                     "--out", str(eval_out)]) == EXIT_OK
        assert (eval_out / "report.csv").exists()
        assert (eval_out / "summary.csv").exists()
        assert "T = " in capsys.readouterr().out

    def test_missing_checkpoint_exit_2(self, tiny_path, tmp_path):
        assert main(["eval", "--scenario", tiny_path,
                     "--checkpoint", str(tmp_path / "nope.ckpt"),
                     "--out", str(tmp_path / "e")]) == EXIT_RUNTIME

    def test_adv_noise_requires_adversary(self, tiny_path, tmp_path):
        train_out = tmp_path / "t"
        assert run_train(tiny_path, train_out) == EXIT_OK
        assert main(["eval", "--scenario", tiny_path,
                     "--checkpoint", str(train_out / "policy.ckpt"),
                     "--noise", "adv", "--eps", "0.05",
                     "--out", str(tmp_path / "e")]) == EXIT_RUNTIME

    def test_adv_noise_end_to_end(self, tiny_path, tmp_path):
        train_out = tmp_path / "t"
        assert run_train(tiny_path, train_out, ["--smooth"]) == EXIT_OK
        assert main(["eval", "--scenario", tiny_path,
                     "--checkpoint", str(train_out / "policy.ckpt"),
                     "--noise", "adv", "--eps", "0.05", "--trials", "2",
                     "--adversary", str(train_out / "adversary.ckpt"),
                     "--out", str(tmp_path / "e")]) == EXIT_OK


class TestPlan:
    def test_astar_artifacts(self, tiny_path, tmp_path, capsys):
        out = tmp_path / "p"
        assert main(["plan", "astar", "--scenario", tiny_path,
                     "--out", str(out)]) == EXIT_OK
        for name in ("manifest.json", "plan.csv", "search.csv", "result.json"):
            assert (out / name).exists(), name
        result = json.loads((out / "result.json").read_text())
        assert result["complete"]
        assert "incumbent time" in capsys.readouterr().out

    def test_dqn_artifacts(self, tiny_path, tmp_path):
        out = tmp_path / "q"
        assert main(["plan", "dqn", "--scenario", tiny_path,
                     "--steps", "300", "--out", str(out)]) == EXIT_OK
        assert (out / "qnet.ckpt").exists()
        assert (out / "curve.csv").exists()


class TestPlot:
    def test_scenario_only(self, tiny_path, tmp_path):
        out = tmp_path / "p"
        assert main(["plot", "--scenario", tiny_path, "--out", str(out)]) == EXIT_OK
        svg = (out / "trajectory.svg").read_text()
        assert svg.startswith("<svg")

    def test_byte_identical_across_runs(self, tiny_path, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        assert main(["plot", "--scenario", tiny_path, "--out", str(a)]) == EXIT_OK
        assert main(["plot", "--scenario", tiny_path, "--out", str(b)]) == EXIT_OK
        assert (a / "trajectory.svg").read_bytes() == (b / "trajectory.svg").read_bytes()

    def test_with_planned_trajectory(self, tiny_path, tmp_path):
        plan_out = tmp_path / "plan"
        assert main(["plan", "astar", "--scenario", tiny_path,
                     "--out", str(plan_out)]) == EXIT_OK
        out = tmp_path / "plot"
        assert main(["plot", "--scenario", tiny_path,
                     "--trajectory", str(plan_out / "plan.csv"),
                     "--out", str(out)]) == EXIT_OK
        assert "<polyline" in (out / "trajectory.svg").read_text()

    def test_missing_trajectory_exit_2(self, tiny_path, tmp_path):
        assert main(["plot", "--scenario", tiny_path,
                     "--trajectory", str(tmp_path / "nope.csv"),
                     "--out", str(tmp_path / "p")]) == EXIT_RUNTIME


class TestSweep:
    def test_runs_each_entry(self, tiny_path, tmp_path):
        sweep_file = tmp_path / "sweep.json"
        sweep_file.write_text(json.dumps([
            {"seed": 0, "updates": 1, "rollout_steps": 32, "epochs": 1,
             "minibatch_size": 16, "num_envs": 2},
            {"seed": 1, "scheme": "none", "updates": 1, "rollout_steps": 32,
             "epochs": 1, "minibatch_size": 16, "num_envs": 2},
        ]))
        out = tmp_path / "sweep"
        assert main(["sweep", "--scenario", tiny_path,
                     "--file", str(sweep_file), "--out", str(out)]) == EXIT_OK
        assert (out / "run_000" / "policy.ckpt").exists()
        assert (out / "run_001" / "policy.ckpt").exists()
        r1 = json.loads((out / "run_001" / "result.json").read_text())
        assert r1["scheme"] == "none" and r1["seed"] == 1

    def test_missing_file_exit_2(self, tiny_path, tmp_path):
        assert main(["sweep", "--scenario", tiny_path,
                     "--file", str(tmp_path / "nope.json"),
                     "--out", str(tmp_path / "s")]) == EXIT_RUNTIME

    def test_non_list_file_exit_2(self, tiny_path, tmp_path):
        sweep_file = tmp_path / "sweep.json"
        sweep_file.write_text('{"seed": 0}')
        assert main(["sweep", "--scenario", tiny_path,
                     "--file", str(sweep_file),
                     "--out", str(tmp_path / "s")]) == EXIT_RUNTIME
