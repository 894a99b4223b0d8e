"""Shared helpers: synthetic corpora on disk and hand-assembled manifests."""

import numpy as np

from xraynet import data, synthetic

# Lines recorded by the acceptance tests; echoed in the terminal summary so
# the per-criterion verdicts survive pytest's output capture.
_acceptance_lines: list[str] = []


def record_acceptance(line: str) -> None:
    _acceptance_lines.append(line)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if _acceptance_lines:
        terminalreporter.section("acceptance criteria")
        for line in _acceptance_lines:
            terminalreporter.write_line(line)


def texture_manifest(root, per_class: int, seed: int = 0) -> data.DatasetManifest:
    """Blob-vs-stripe corpus written under root, loaded back as a manifest."""
    synthetic.write_texture_corpus(str(root), per_class=per_class, seed=seed)
    return data.load_dataset(str(root))


def planted_manifest(root, per_class: int, seed: int = 0) -> data.DatasetManifest:
    """Noise-vs-planted-patch corpus written under root, loaded back."""
    synthetic.write_planted_corpus(str(root), per_class=per_class, seed=seed)
    return data.load_dataset(str(root))


def assign_splits(manifest: data.DatasetManifest, per_class: dict[str, tuple[int, int, int]]) -> data.DatasetManifest:
    """Deterministic manual split: per_class maps label -> (train, val, test) counts."""
    rows = []
    for label, (n_train, n_val, n_test) in per_class.items():
        group = [r for r in manifest.rows if r.label == label]
        if len(group) < n_train + n_val + n_test:
            raise ValueError(f"not enough rows for label {label}")
        for i, r in enumerate(group[: n_train + n_val + n_test]):
            split = "train" if i < n_train else ("val" if i < n_train + n_val else "test")
            rows.append(data.ManifestRow(r.path, r.label, split))
    rows.sort(key=lambda r: r.path)
    return data.DatasetManifest(rows=tuple(rows), skipped=manifest.skipped)


def write_gray_png(path, values: np.ndarray) -> None:
    """Save a float HxW array in [0,1] as an 8-bit grayscale PNG."""
    from PIL import Image

    arr = np.clip(np.asarray(values, dtype=np.float64), 0.0, 1.0)
    Image.fromarray((arr * 255.0).round().astype(np.uint8), mode="L").save(str(path))
