#ifndef HITCERT_WEIGHTS_HPP
#define HITCERT_WEIGHTS_HPP

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <memory>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "core.hpp"
#include "rng.hpp"

namespace hitcert {

/// Isotropic Gaussian kernel density estimate.
///
/// density(x) = (1/m) * sum_i (2*pi*h^2)^(-d/2) * exp(-|x - x_i|^2 / (2 h^2))
///
/// Evaluation happens in log space (log-sum-exp) so queries far from the
/// support keep a finite, ordered log-density instead of underflowing.
class KdeDensity {
public:
    KdeDensity(std::vector<FeatureVector> support_points, double bandwidth)
        : points_(std::move(support_points)), bandwidth_(bandwidth) {
        if (points_.empty()) throw InputError("KdeDensity: needs at least one support point");
        if (!(bandwidth > 0.0) || !std::isfinite(bandwidth))
            throw InputError("KdeDensity: bandwidth must be positive and finite");
        dimension_ = points_.front().size();
        detail::check_rows(points_, dimension_, "KdeDensity");
        const double two_pi = 6.283185307179586476925286766559;
        log_norm_ = -std::log(static_cast<double>(points_.size())) -
                    0.5 * static_cast<double>(dimension_) * std::log(two_pi * bandwidth_ * bandwidth_);
    }

    std::size_t size() const { return points_.size(); }
    std::size_t dimension() const { return dimension_; }
    double bandwidth() const { return bandwidth_; }
    const std::vector<FeatureVector>& support_points() const { return points_; }

    double log_density(std::span<const double> x) const {
        if (x.size() != dimension_)
            throw InputError("KdeDensity: query dimension " + std::to_string(x.size()) +
                             " does not match fitted dimension " + std::to_string(dimension_));
        const double inv_two_h2 = 1.0 / (2.0 * bandwidth_ * bandwidth_);
        double max_e = -std::numeric_limits<double>::infinity();
        exponents_.resize(points_.size());
        for (std::size_t i = 0; i < points_.size(); ++i) {
            double d2 = 0.0;
            const FeatureVector& p = points_[i];
            for (std::size_t c = 0; c < dimension_; ++c) {
                const double diff = x[c] - p[c];
                d2 += diff * diff;
            }
            const double e = -d2 * inv_two_h2;
            exponents_[i] = e;
            max_e = std::max(max_e, e);
        }
        double s = 0.0;
        for (double e : exponents_) s += std::exp(e - max_e);
        return max_e + std::log(s) + log_norm_;
    }

    double density(std::span<const double> x) const { return std::exp(log_density(x)); }
    double operator()(std::span<const double> x) const { return density(x); }

private:
    std::vector<FeatureVector> points_;
    double bandwidth_;
    std::size_t dimension_ = 0;
    double log_norm_ = 0.0;
    mutable std::vector<double> exponents_; // scratch, not part of logical state
};

/// Per-coordinate affine map z = (x - center) / scale. Ratios of densities
/// fitted in z-space equal ratios in x-space (the Jacobians cancel).
struct StandardScaler {
    FeatureVector center;
    FeatureVector scale;

    static StandardScaler fit(const std::vector<FeatureVector>& rows) {
        if (rows.empty()) throw InputError("StandardScaler: no rows");
        const std::size_t d = rows.front().size();
        StandardScaler s;
        s.center.assign(d, 0.0);
        s.scale.assign(d, 0.0);
        for (const auto& r : rows)
            for (std::size_t c = 0; c < d; ++c) s.center[c] += r[c];
        for (double& v : s.center) v /= static_cast<double>(rows.size());
        for (const auto& r : rows)
            for (std::size_t c = 0; c < d; ++c) {
                const double diff = r[c] - s.center[c];
                s.scale[c] += diff * diff;
            }
        for (double& v : s.scale) {
            v = std::sqrt(v / static_cast<double>(rows.size()));
            if (!(v > 0.0)) v = 1.0; // constant coordinate
        }
        return s;
    }

    static StandardScaler identity(std::size_t d) {
        StandardScaler s;
        s.center.assign(d, 0.0);
        s.scale.assign(d, 1.0);
        return s;
    }

    FeatureVector apply(std::span<const double> x) const {
        if (x.size() != center.size()) throw InputError("StandardScaler: dimension mismatch");
        FeatureVector z(x.size());
        for (std::size_t c = 0; c < x.size(); ++c) z[c] = (x[c] - center[c]) / scale[c];
        return z;
    }

    std::vector<FeatureVector> apply_all(const std::vector<FeatureVector>& rows) const {
        std::vector<FeatureVector> out;
        out.reserve(rows.size());
        for (const auto& r : rows) out.push_back(apply(r));
        return out;
    }
};

struct KdeCvResult {
    double bandwidth = 0.0;
    /// (bandwidth, mean held-out log-likelihood) per grid value
    std::vector<std::pair<double, double>> table;
};

/// Bandwidth selection by seeded k-fold cross-validation: the grid value
/// with the highest mean held-out log-likelihood wins, ties toward the
/// smaller bandwidth.
inline KdeCvResult cross_validate_bandwidth(const std::vector<FeatureVector>& points,
                                            const std::vector<double>& bandwidth_grid, int folds,
                                            RngStream rng) {
    if (bandwidth_grid.empty()) throw InputError("fit_kde: bandwidth grid is empty");
    for (double h : bandwidth_grid)
        if (!(h > 0.0) || !std::isfinite(h))
            throw InputError("fit_kde: bandwidths must be positive and finite");
    if (folds < 2) throw InputError("fit_kde: need at least 2 folds");
    if (points.size() < static_cast<std::size_t>(folds))
        throw InputError("fit_kde: " + std::to_string(points.size()) + " points for " +
                         std::to_string(folds) + " folds");

    std::vector<std::size_t> order(points.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    rng.partial_shuffle(order, order.size());

    KdeCvResult result;
    double best_ll = -std::numeric_limits<double>::infinity();
    for (double h : bandwidth_grid) {
        double total_ll = 0.0;
        for (int f = 0; f < folds; ++f) {
            std::vector<FeatureVector> train;
            std::vector<const FeatureVector*> held;
            train.reserve(points.size());
            for (std::size_t i = 0; i < order.size(); ++i) {
                if (static_cast<int>(i % static_cast<std::size_t>(folds)) == f)
                    held.push_back(&points[order[i]]);
                else
                    train.push_back(points[order[i]]);
            }
            KdeDensity fold_fit(std::move(train), h);
            for (const FeatureVector* p : held) total_ll += fold_fit.log_density(*p);
        }
        const double mean_ll = total_ll / static_cast<double>(points.size());
        result.table.emplace_back(h, mean_ll);
        if (mean_ll > best_ll || (mean_ll == best_ll && h < result.bandwidth)) {
            best_ll = mean_ll;
            result.bandwidth = h;
        }
    }
    return result;
}

/// Cross-validated fit over all points. A single-value grid skips the CV
/// (the forced-bandwidth path) but keeps the precondition checks.
inline KdeDensity fit_kde(const std::vector<FeatureVector>& points,
                          const std::vector<double>& bandwidth_grid, int folds,
                          RngStream rng) {
    if (bandwidth_grid.size() == 1) {
        if (folds < 2) throw InputError("fit_kde: need at least 2 folds");
        if (points.size() < static_cast<std::size_t>(folds))
            throw InputError("fit_kde: " + std::to_string(points.size()) + " points for " +
                             std::to_string(folds) + " folds");
        if (!(bandwidth_grid.front() > 0.0) || !std::isfinite(bandwidth_grid.front()))
            throw InputError("fit_kde: bandwidths must be positive and finite");
        return KdeDensity(points, bandwidth_grid.front());
    }
    const KdeCvResult cv = cross_validate_bandwidth(points, bandwidth_grid, folds, rng);
    return KdeDensity(points, cv.bandwidth);
}

/// Density-ratio model q_hat / p_hat from two KDEs, optionally fitted in
/// standardized coordinates (per-coordinate z-scores of the calibration
/// side). The log-ratio is clamped to +-700 so the weight stays positive
/// and finite at any finite query.
class KdeRatioModel {
public:
    KdeRatioModel(KdeDensity fit_p, KdeDensity fit_q, StandardScaler scaler)
        : fit_p_(std::move(fit_p)), fit_q_(std::move(fit_q)), scaler_(std::move(scaler)) {}

    const KdeDensity& fit_p() const { return fit_p_; }
    const KdeDensity& fit_q() const { return fit_q_; }
    const StandardScaler& scaler() const { return scaler_; }
    double bandwidth_p() const { return fit_p_.bandwidth(); }
    double bandwidth_q() const { return fit_q_.bandwidth(); }

    double log_ratio(std::span<const double> x) const {
        const FeatureVector z = scaler_.apply(x);
        const double lr = fit_q_.log_density(z) - fit_p_.log_density(z);
        return std::clamp(lr, -700.0, 700.0);
    }

    double ratio(std::span<const double> x) const { return std::exp(log_ratio(x)); }

    /// Calibration-side log-density in fitted coordinates (OOD filtering).
    double calibration_log_density(std::span<const double> x) const {
        return fit_p_.log_density(scaler_.apply(x));
    }

private:
    KdeDensity fit_p_;
    KdeDensity fit_q_;
    StandardScaler scaler_;
};

inline KdeRatioModel build_ratio_model(const std::vector<FeatureVector>& calibration_feats,
                                       const std::vector<FeatureVector>& generated_feats,
                                       const std::vector<double>& bandwidth_grid, int folds,
                                       RngStream rng, bool standardize = true) {
    if (calibration_feats.empty() || generated_feats.empty())
        throw InputError("build_ratio_model: both feature sets must be nonempty");
    if (calibration_feats.front().size() != generated_feats.front().size())
        throw InputError("build_ratio_model: feature dimensions differ");
    const StandardScaler scaler = standardize
                                      ? StandardScaler::fit(calibration_feats)
                                      : StandardScaler::identity(calibration_feats.front().size());
    KdeDensity p = fit_kde(scaler.apply_all(calibration_feats), bandwidth_grid, folds,
                           rng.substream(0));
    KdeDensity q = fit_kde(scaler.apply_all(generated_feats), bandwidth_grid, folds,
                           rng.substream(1));
    return KdeRatioModel(std::move(p), std::move(q), scaler);
}

/// Positive weight function on feature space. Tabulated weights are bound
/// to dataset rows instead of raw features (used for precomputed per-row
/// weight files), so the row-resolved accessors below are the interface
/// the inference engines use.
class WeightFn {
public:
    enum class Kind { Uniform, AnalyticGaussianShift, KdeRatio, PowerTransform, Tabulated };

    static WeightFn uniform() { return WeightFn(Kind::Uniform); }

    /// Exact ratio of N(mu, I_d) to N(0, I_d): w(x) = exp(mu.x - |mu|^2 / 2).
    static WeightFn analytic_gaussian_shift(FeatureVector mu) {
        WeightFn w(Kind::AnalyticGaussianShift);
        if (!detail::all_finite(mu)) throw InputError("analytic shift: mu must be finite");
        double sq = 0.0;
        for (double v : mu) sq += v * v;
        w.mu_ = std::move(mu);
        w.half_mu_sq_ = 0.5 * sq;
        return w;
    }

    static WeightFn kde_ratio(KdeRatioModel model) {
        WeightFn w(Kind::KdeRatio);
        w.model_ = std::make_shared<KdeRatioModel>(std::move(model));
        return w;
    }

    /// Per-row weights: pool_weights[i] for pool row i, batch_weights[j]
    /// for batch row j.
    static WeightFn tabulated(std::vector<double> pool_weights, std::vector<double> batch_weights) {
        WeightFn w(Kind::Tabulated);
        for (double v : pool_weights)
            if (!(v > 0.0) || !std::isfinite(v))
                throw InputError("tabulated weights: pool weight must be positive and finite");
        for (double v : batch_weights)
            if (!(v > 0.0) || !std::isfinite(v))
                throw InputError("tabulated weights: batch weight must be positive and finite");
        w.pool_w_ = std::move(pool_weights);
        w.batch_w_ = std::move(batch_weights);
        return w;
    }

    Kind kind() const { return kind_; }
    double gamma() const { return gamma_; }
    const WeightFn* base() const { return base_.get(); }
    const KdeRatioModel* ratio_model() const {
        if (model_) return model_.get();
        if (base_) return base_->ratio_model();
        return nullptr;
    }

    /// Evaluate on a raw feature vector. Tabulated weights have no
    /// feature-space evaluation and throw.
    double operator()(std::span<const double> x) const {
        switch (kind_) {
            case Kind::Uniform:
                return 1.0;
            case Kind::AnalyticGaussianShift: {
                if (x.size() != mu_.size())
                    throw InputError("analytic shift: dimension mismatch");
                double dot = 0.0;
                for (std::size_t c = 0; c < x.size(); ++c) dot += mu_[c] * x[c];
                // clamp keeps the weight positive and finite in far tails
                return std::exp(std::clamp(dot - half_mu_sq_, -700.0, 700.0));
            }
            case Kind::KdeRatio:
                return model_->ratio(x);
            case Kind::PowerTransform:
                return apply_gamma_((*base_)(x));
            case Kind::Tabulated:
                throw InputError("tabulated weights are bound to dataset rows; "
                                 "feature-space evaluation is undefined");
        }
        return 1.0;
    }

    double pool_row_weight(const LabeledPool& pool, std::size_t i) const {
        if (kind_ == Kind::Tabulated) {
            if (i >= pool_w_.size())
                throw InputError("tabulated weights: pool row " + std::to_string(i) +
                                 " beyond table of size " + std::to_string(pool_w_.size()));
            return pool_w_[i];
        }
        if (kind_ == Kind::PowerTransform) return apply_gamma_(base_->pool_row_weight(pool, i));
        return (*this)(pool.feature(i));
    }

    double batch_row_weight(const CandidateBatch& batch, std::size_t j) const {
        if (kind_ == Kind::Tabulated) {
            if (j >= batch_w_.size())
                throw InputError("tabulated weights: batch row " + std::to_string(j) +
                                 " beyond table of size " + std::to_string(batch_w_.size()));
            return batch_w_[j];
        }
        if (kind_ == Kind::PowerTransform) return apply_gamma_(base_->batch_row_weight(batch, j));
        return (*this)(batch.feature(j));
    }

    friend WeightFn power_transform(WeightFn base, double gamma);

private:
    explicit WeightFn(Kind kind) : kind_(kind) {}

    double apply_gamma_(double w) const {
        if (gamma_ == 1.0) return w;       // exact pass-through
        if (gamma_ == 0.0) return 1.0;     // reduces to uniform
        return std::pow(w, gamma_);
    }

    Kind kind_;
    FeatureVector mu_;
    double half_mu_sq_ = 0.0;
    std::shared_ptr<const KdeRatioModel> model_;
    std::shared_ptr<const WeightFn> base_;
    double gamma_ = 1.0;
    std::vector<double> pool_w_;
    std::vector<double> batch_w_;
};

/// w(x)^gamma. gamma = 1 is an exact pass-through; gamma = 0 is uniform.
inline WeightFn power_transform(WeightFn base, double gamma) {
    if (!std::isfinite(gamma)) throw InputError("power_transform: gamma must be finite");
    WeightFn w(WeightFn::Kind::PowerTransform);
    w.base_ = std::make_shared<const WeightFn>(std::move(base));
    w.gamma_ = gamma;
    return w;
}

/// Keeps the candidates whose log-density under the reference fit is at or
/// above the `quantile`-quantile of the reference points' own log-densities.
/// quantile = 0 disables the cutoff. Order is preserved.
template <class LogDensityFn>
std::vector<std::size_t> ood_filter_logdensity(LogDensityFn&& log_density,
                                               const std::vector<FeatureVector>& reference,
                                               const std::vector<FeatureVector>& candidates,
                                               double quantile) {
    if (reference.empty()) throw InputError("ood_filter: reference set is empty");
    if (!(quantile >= 0.0 && quantile < 1.0))
        throw InputError("ood_filter: quantile must lie in [0, 1)");
    std::vector<std::size_t> kept;
    kept.reserve(candidates.size());
    if (quantile == 0.0) {
        for (std::size_t j = 0; j < candidates.size(); ++j) kept.push_back(j);
        return kept;
    }
    std::vector<double> ref_ld;
    ref_ld.reserve(reference.size());
    for (const auto& r : reference) ref_ld.push_back(log_density(r));
    std::sort(ref_ld.begin(), ref_ld.end());
    const std::size_t m = ref_ld.size();
    std::size_t idx = static_cast<std::size_t>(
        std::ceil(quantile * static_cast<double>(m)));
    if (idx < 1) idx = 1;
    if (idx > m) idx = m;
    const double threshold = ref_ld[idx - 1];
    for (std::size_t j = 0; j < candidates.size(); ++j)
        if (log_density(candidates[j]) >= threshold) kept.push_back(j);
    return kept;
}

inline std::vector<std::size_t> ood_filter(const KdeDensity& density,
                                           const std::vector<FeatureVector>& reference,
                                           const std::vector<FeatureVector>& candidates,
                                           double quantile) {
    return ood_filter_logdensity(
        [&](const FeatureVector& x) { return density.log_density(x); }, reference, candidates,
        quantile);
}

} // namespace hitcert

#endif // HITCERT_WEIGHTS_HPP
