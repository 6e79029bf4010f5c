"""Desk-scale runs on real MNIST and Fashion-MNIST; collected only when GRAPHCAPS_DATA_DIR is set."""

import os

import pandas as pd
import pytest

from src.main import run_cli

pytestmark = pytest.mark.slow


def desk_args(dataset, out):
    return [
        "--preset",
        "desk",
        "--dataset",
        dataset,
        "--data-dir",
        os.environ["GRAPHCAPS_DATA_DIR"],
        "--out",
        str(out),
    ]


def train_and_eval(args, *extra):
    result = run_cli(["train", *args, *extra])
    assert result.exit_code == 0, result.traceback
    report = run_cli(["eval", *args, *extra])
    assert report.exit_code == 0, report.traceback
    return report.value.accuracy


@pytest.fixture(scope="module")
def mnist_run(tmp_path_factory):
    args = desk_args("mnist", tmp_path_factory.mktemp("mnist"))
    return args, train_and_eval(args)


@pytest.fixture(scope="module")
def fashion_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("fashion")
    args = desk_args("fashion-mnist", out)
    return args, out, train_and_eval(args)


def test_mnist_accuracy(mnist_run):
    _, accuracy = mnist_run
    assert accuracy >= 0.97


def test_averaging_baseline_is_close(mnist_run, tmp_path):
    _, accuracy = mnist_run
    args = desk_args("mnist", tmp_path)
    baseline = train_and_eval(args, "--set", "model.aggregation=average")
    assert baseline >= accuracy - 0.02


def test_fashion_accuracy(fashion_run):
    _, _, accuracy = fashion_run
    assert accuracy >= 0.85


def test_attention_beats_random_under_aopc(fashion_run):
    args, out, _ = fashion_run
    result = run_cli(["aopc", *args, "--images", "200", "--methods", "att,grad,ig,random"])
    assert result.exit_code == 0, result.traceback
    summary = pd.read_csv(out / "aopc_summary.csv").set_index("method")
    assert (summary["n_images"] == 200).all()
    assert summary.loc["att", "aopc"] > summary.loc["random", "aopc"]


def test_fgsm_success_grows_with_epsilon(fashion_run):
    args, out, _ = fashion_run
    result = run_cli(["attack", *args, "--images", "500"])
    assert result.exit_code == 0, result.traceback
    table = pd.read_csv(out / "attack_untargeted.csv")
    assert table["epsilon"].tolist() == [0.01, 0.02, 0.03, 0.04, 0.05]
    assert table["success_rate"].iloc[-1] > table["success_rate"].iloc[0]
