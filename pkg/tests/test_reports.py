import numpy as np

from xraynet import metrics, reports
from xraynet.training import EpochRecord

PNG_MAGIC = b"\x89PNG\r\n\x1a\n"


def _history(n=3):
    return [EpochRecord(epoch=i + 1,
                        train_loss=0.7 / (i + 1), train_acc=0.5 + 0.1 * i,
                        val_loss=0.8 / (i + 1), val_acc=0.5 + 0.08 * i)
            for i in range(n)]


def _read(path) -> bytes:
    with open(path, "rb") as fh:
        return fh.read()


def test_training_curves_png(tmp_path):
    path = tmp_path / "curves.png"
    reports.save_training_curves(_history(), str(path))
    blob = _read(path)
    assert blob.startswith(PNG_MAGIC)
    assert len(blob) > 1000


def test_roc_figure_png(tmp_path):
    curve = metrics.roc(np.asarray([0.1, 0.4, 0.35, 0.8]), [0, 0, 1, 1])
    path = tmp_path / "roc.png"
    reports.save_roc_figure(curve, str(path))
    assert _read(path).startswith(PNG_MAGIC)


def test_confusion_figure_png(tmp_path):
    cm = metrics.confusion([0, 0, 1, 1], [0, 1, 1, 1])
    path = tmp_path / "cm.png"
    reports.save_confusion_figure(cm, str(path))
    assert _read(path).startswith(PNG_MAGIC)


def test_figures_render_single_epoch_history(tmp_path):
    # a one-point history must not crash the plotting path
    path = tmp_path / "one.png"
    reports.save_training_curves(_history(1), str(path))
    assert _read(path).startswith(PNG_MAGIC)
