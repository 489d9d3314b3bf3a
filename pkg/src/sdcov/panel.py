"""Observation panel container shared by simulators, ingest and filters."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class ObservationPanel:
    """Grid-aligned log-price panel with an observation mask.

    prices : (T, n) float array, NaN where unobserved.
    mask : (T, n) bool array, True where observed.
    symbols : column labels.
    times : (T,) integer timestamps (seconds); defaults to 0..T-1.
    """

    prices: np.ndarray
    mask: np.ndarray
    symbols: list[str]
    times: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        self.prices = np.asarray(self.prices, dtype=float)
        self.mask = np.asarray(self.mask, dtype=bool)
        if self.prices.shape != self.mask.shape:
            raise ValueError("prices and mask shapes differ")
        if len(self.symbols) != self.prices.shape[1]:
            raise ValueError("symbol count does not match panel width")
        if self.times is None:
            self.times = np.arange(self.prices.shape[0], dtype=np.int64)
        else:
            self.times = np.asarray(self.times, dtype=np.int64)
        if self.times.shape != (self.prices.shape[0],):
            raise ValueError("times length does not match panel length")

    @property
    def T(self) -> int:
        return self.prices.shape[0]

    @property
    def n(self) -> int:
        return self.prices.shape[1]

    @property
    def missing_fraction(self) -> float:
        return 1.0 - float(self.mask.mean())

    @classmethod
    def from_prices(cls, prices: np.ndarray, symbols: list[str] | None = None,
                    times: np.ndarray | None = None) -> "ObservationPanel":
        """Build a panel from a price array, masking NaN cells."""
        prices = np.asarray(prices, dtype=float)
        if symbols is None:
            symbols = [f"S{i}" for i in range(prices.shape[1])]
        return cls(prices=prices, mask=~np.isnan(prices), symbols=list(symbols),
                   times=times)

    def subpanel(self, rows: slice) -> "ObservationPanel":
        return ObservationPanel(self.prices[rows], self.mask[rows],
                                list(self.symbols), self.times[rows])

    def permute_columns(self, perm: np.ndarray) -> "ObservationPanel":
        perm = np.asarray(perm)
        return ObservationPanel(self.prices[:, perm], self.mask[:, perm],
                                [self.symbols[i] for i in perm], self.times.copy())
