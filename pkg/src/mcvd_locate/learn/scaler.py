from __future__ import annotations

import numpy as np

STD_FLOOR = 1e-8


class NotFittedError(RuntimeError):
    pass


class Scaler:
    """Column standardization for features and for the 21 metric targets.

    Targets are position (3) followed by transmitter positions (18). Fitting
    is allowed once; `n_fit_rows` records how many rows it saw so the
    pipeline can prove it only saw the training split. `expansion` is the
    number of rows fitted per source row when the fit used augmented copies.
    """

    def __init__(self):
        self.x_mean = self.x_std = self.y_mean = self.y_std = None
        self.n_fit_rows = 0
        self.expansion = 1

    @property
    def fitted(self) -> bool:
        return self.x_mean is not None

    def fit(self, X, Y, expansion: int = 1) -> "Scaler":
        if self.fitted:
            raise RuntimeError("scaler is already fitted")
        X = np.asarray(X, dtype=float)
        Y = np.asarray(Y, dtype=float)
        if len(X) == 0 or len(X) != len(Y):
            raise ValueError("fit needs the same non-zero number of feature and target rows")
        self.x_mean, self.x_std = X.mean(axis=0), np.maximum(X.std(axis=0), STD_FLOOR)
        self.y_mean, self.y_std = Y.mean(axis=0), np.maximum(Y.std(axis=0), STD_FLOOR)
        if len(X) % expansion:
            raise ValueError("row count is not a multiple of the expansion factor")
        self.n_fit_rows = len(X)
        self.expansion = int(expansion)
        return self

    def _need(self):
        if not self.fitted:
            raise NotFittedError("scaler used before fit")

    def apply(self, X):
        self._need()
        return (np.asarray(X, dtype=float) - self.x_mean) / self.x_std

    def apply_targets(self, Y):
        self._need()
        return (np.asarray(Y, dtype=float) - self.y_mean) / self.y_std

    def invert_targets(self, Ys):
        self._need()
        return np.asarray(Ys, dtype=float) * self.y_std + self.y_mean

    # position / tx views
    @property
    def pos_mean(self):
        return self.y_mean[:3]

    @property
    def pos_std(self):
        return self.y_std[:3]

    @property
    def tx_mean(self):
        return self.y_mean[3:]

    @property
    def tx_std(self):
        return self.y_std[3:]

    def to_dict(self) -> dict:
        self._need()
        return {k: getattr(self, k).tolist() for k in ("x_mean", "x_std", "y_mean", "y_std")} | {
            "n_fit_rows": self.n_fit_rows, "expansion": self.expansion}

    @classmethod
    def from_dict(cls, d: dict) -> "Scaler":
        s = cls()
        for k in ("x_mean", "x_std", "y_mean", "y_std"):
            setattr(s, k, np.array(d[k], dtype=float))
        s.n_fit_rows = int(d["n_fit_rows"])
        s.expansion = int(d.get("expansion", 1))
        return s
