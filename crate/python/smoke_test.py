"""Smoke test for the `wam` Python module.

Build first:
    cargo build --release -p wam-py --features extension-module
then run from the repository root:
    python3 python/smoke_test.py
"""

import math
import os
import shutil
import sys
import tempfile

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))


def import_wam():
    try:
        import wam  # noqa: F401
        return wam
    except ImportError:
        pass
    for name in ("libwam.so", "libwam.dylib", "wam.dll"):
        lib = os.path.join(ROOT, "target", "release", name)
        if os.path.exists(lib):
            tmp = tempfile.mkdtemp(prefix="wam-py-")
            shutil.copy(lib, os.path.join(tmp, "wam.pyd" if name.endswith("dll") else "wam.so"))
            sys.path.insert(0, tmp)
            import wam
            return wam
    sys.exit("wam module not found; build it with "
             "`cargo build --release -p wam-py --features extension-module`")


def main():
    wam = import_wam()
    print("wam", wam.__version__)

    mask = wam.group_mask(2, 1, 1, 1)
    assert ["".join("1" if v else "0" for v in row) for row in mask] == [
        "11000", "11000", "11100", "11110", "11111"]
    assert abs(wam.pdms(1, 1, 1, 0.5, 1) - 9.5 / 12) < 1e-12
    assert wam.pdms(0, 1, 1, 1, 1) == 0.0
    assert wam.psnr([0.5, 0.5], [0.5, 0.5]) == 100.0

    cfg = wam.Config.desk()
    cfg.set("train.batch=2")
    assert wam.Config.from_toml(cfg.to_toml()).to_toml() == cfg.to_toml()

    train = wam.Episodes.generate(cfg, 8, "train", 0)
    test = wam.Episodes.generate(cfg, 3, "test", 0)
    assert len(train) == 8 and len(test) == 3
    assert len(train.expert(0)) > 0 and min(min(r) for r in train.depth(0)) > 0

    trainer = wam.Trainer(cfg, train)
    losses = trainer.train(5)
    assert len(losses) == 5 and trainer.step == 5
    assert all(math.isfinite(l["total"]) for l in losses)
    print("losses", [round(l["total"], 4) for l in losses])

    with tempfile.TemporaryDirectory() as d:
        path = os.path.join(d, "ck.wack")
        trainer.save(path)
        model = wam.Model.load(path)
    assert model.heads == trainer.model().heads

    traj = model.plan(test, 0, steps=4, seed=1)
    assert len(traj) == len(test.expert(0))
    report = model.evaluate(test, "plan")
    assert report["counters.depth_evals"] == 0 and report["counters.video_evals"] == 0
    assert report["counters.action_evals"] > 0
    print("plan.pdms", round(report["plan.pdms"], 4))

    depth = model.predict_depth(test, 0, steps=2)
    assert all(v > 0 for row in depth for v in row)
    frames, h, w, rgb = model.predict_video(test, 0, steps=2)
    assert len(rgb) == frames * h * w * 3
    print("ok")


if __name__ == "__main__":
    main()
