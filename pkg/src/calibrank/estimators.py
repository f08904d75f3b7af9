"""Sklearn-style estimator wrappers around the functional core.

These follow the BaseEstimator conventions (constructor params stored as-is,
``get_params``/``set_params``, fit returns self) so the calibration pipeline
composes with the wider scikit-learn ecosystem.
"""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.exceptions import NotFittedError

from .bundles import GalleryIndex, TextBundle, VisualBundle, validate_bundle
from .rerank import FusionConfig, RankingResult, fuse_and_rank
from .textual import CalibratedQuery, calibrate_query
from .visual import RectifierConfig, calibrate_image


def check_bundles(X, expected_type) -> list:
    """Input validation helper: X must be a non-empty sequence of validated
    bundles of the expected type."""
    bundles = list(X)
    if not bundles:
        raise ValueError("expected at least one bundle")
    for b in bundles:
        if not isinstance(b, expected_type):
            raise TypeError(
                f"expected {expected_type.__name__}, got {type(b).__name__}"
            )
        validate_bundle(b)
    return bundles


class VisualCalibrator(TransformerMixin, BaseEstimator):
    """Transforms visual bundles into calibrated joint-space global vectors."""

    def __init__(self, eta=0.1, threshold_strategy="mean", epsilon=1e-6, enabled=True):
        self.eta = eta
        self.threshold_strategy = threshold_strategy
        self.epsilon = epsilon
        self.enabled = enabled

    def _config(self) -> RectifierConfig:
        return RectifierConfig(
            eta=self.eta,
            threshold_strategy=self.threshold_strategy,
            epsilon=self.epsilon,
        )

    def fit(self, X, y=None):
        check_bundles(X, VisualBundle)
        return self

    def transform(self, X, reference=None) -> np.ndarray:
        """Calibrated global vectors, one row per bundle.

        ``reference`` optionally supplies one joint-space anchor per bundle;
        by default each image anchors its own region decoupling.
        """
        bundles = check_bundles(X, VisualBundle)
        cfg = self._config()
        refs = [None] * len(bundles) if reference is None else list(reference)
        rows = [
            calibrate_image(b, cfg, reference=r, enabled=self.enabled).cls_joint_calibrated
            for b, r in zip(bundles, refs)
        ]
        return np.vstack(rows)

    def calibrations(self, X, reference=None):
        """Full per-image calibration records (masks, reports, gates)."""
        bundles = check_bundles(X, VisualBundle)
        cfg = self._config()
        refs = [None] * len(bundles) if reference is None else list(reference)
        return [
            calibrate_image(b, cfg, reference=r, enabled=self.enabled)
            for b, r in zip(bundles, refs)
        ]


class TextCalibrator(TransformerMixin, BaseEstimator):
    """Transforms text bundles into calibrated queries."""

    def __init__(self, threshold_strategy="mean"):
        self.threshold_strategy = threshold_strategy

    def fit(self, X, y=None):
        check_bundles(X, TextBundle)
        return self

    def transform(self, X) -> list[CalibratedQuery]:
        bundles = check_bundles(X, TextBundle)
        return [calibrate_query(b, self.threshold_strategy) for b in bundles]


class CalibratedRetriever(BaseEstimator):
    """End-to-end calibrated retriever: fit on a gallery of visual bundles,
    rank text-bundle queries."""

    def __init__(
        self,
        eta=0.1,
        lam=0.5,
        top_k=100,
        epsilon=1e-6,
        vis_threshold="mean",
        text_threshold="mean",
        use_cve=True,
        use_dcc=True,
    ):
        self.eta = eta
        self.lam = lam
        self.top_k = top_k
        self.epsilon = epsilon
        self.vis_threshold = vis_threshold
        self.text_threshold = text_threshold
        self.use_cve = use_cve
        self.use_dcc = use_dcc

    def fit(self, X, y=None):
        bundles = check_bundles(X, VisualBundle)
        calibrator = VisualCalibrator(
            eta=self.eta,
            threshold_strategy=self.vis_threshold,
            epsilon=self.epsilon,
            enabled=self.use_cve,
        )
        records = calibrator.calibrations(bundles)
        self.gallery_ = GalleryIndex(
            ids=[b.image_id for b in bundles],
            calibrated=np.vstack([r.cls_joint_calibrated for r in records]),
            raw=np.vstack([b.cls_joint for b in bundles]),
            meta={
                "dominant_images": sum(1 for r in records if r.report.dominant),
                "count": len(bundles),
            },
        )
        return self

    def _check_fitted(self) -> GalleryIndex:
        gallery = getattr(self, "gallery_", None)
        if gallery is None:
            raise NotFittedError("CalibratedRetriever is not fitted; call fit first")
        return gallery

    def rank(self, X) -> list[RankingResult]:
        gallery = self._check_fitted()
        bundles = check_bundles(X, TextBundle)
        cfg = FusionConfig(lam=self.lam, k=self.top_k)
        results = []
        for b in bundles:
            query = calibrate_query(b, self.text_threshold)
            results.append(
                fuse_and_rank(
                    query, query.text_global, gallery, cfg, use_disc=self.use_dcc
                )
            )
        return results

    def predict(self, X) -> np.ndarray:
        """Top-1 gallery id per query."""
        return np.asarray([r.entries[0].image_id for r in self.rank(X)], dtype=object)
