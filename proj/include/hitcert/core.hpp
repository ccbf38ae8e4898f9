#ifndef HITCERT_CORE_HPP
#define HITCERT_CORE_HPP

#include <cmath>
#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace hitcert {

/// Thrown for malformed input data or out-of-contract arguments.
class InputError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// One feature row: d finite real coordinates.
using FeatureVector = std::vector<double>;

namespace detail {

inline bool all_finite(const FeatureVector& x) {
    for (double v : x)
        if (!std::isfinite(v)) return false;
    return true;
}

inline void check_rows(const std::vector<FeatureVector>& rows, std::size_t dim,
                       const char* what) {
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (rows[i].size() != dim)
            throw InputError(std::string(what) + ": row " + std::to_string(i) +
                             " has dimension " + std::to_string(rows[i].size()) +
                             ", expected " + std::to_string(dim));
        if (!all_finite(rows[i]))
            throw InputError(std::string(what) + ": row " + std::to_string(i) +
                             " contains a non-finite value");
    }
}

} // namespace detail

/// Calibration data: features, binary labels, optional predictor scores.
/// Rows are immutable after construction and keep their input order.
class LabeledPool {
public:
    LabeledPool(std::vector<FeatureVector> features, std::vector<int> labels,
                std::optional<std::vector<double>> predictor_scores = std::nullopt)
        : features_(std::move(features)),
          labels_(std::move(labels)),
          predictor_scores_(std::move(predictor_scores)) {
        if (features_.empty()) throw InputError("LabeledPool: needs at least one row");
        dimension_ = features_.front().size();
        detail::check_rows(features_, dimension_, "LabeledPool");
        if (labels_.size() != features_.size())
            throw InputError("LabeledPool: " + std::to_string(labels_.size()) +
                             " labels for " + std::to_string(features_.size()) + " rows");
        for (std::size_t i = 0; i < labels_.size(); ++i) {
            if (labels_[i] != 0 && labels_[i] != 1)
                throw InputError("LabeledPool: label at row " + std::to_string(i) +
                                 " is " + std::to_string(labels_[i]) + ", must be 0 or 1");
            if (labels_[i] == 0) inactive_.push_back(i);
        }
        if (predictor_scores_) {
            if (predictor_scores_->size() != features_.size())
                throw InputError("LabeledPool: predictor score count does not match row count");
            for (std::size_t i = 0; i < predictor_scores_->size(); ++i)
                if (!std::isfinite((*predictor_scores_)[i]))
                    throw InputError("LabeledPool: non-finite predictor score at row " +
                                     std::to_string(i));
        }
    }

    std::size_t size() const { return features_.size(); }
    std::size_t dimension() const { return dimension_; }
    const std::vector<FeatureVector>& features() const { return features_; }
    const FeatureVector& feature(std::size_t i) const { return features_[i]; }
    const std::vector<int>& labels() const { return labels_; }

    /// Indices with label 0, in row order.
    const std::vector<std::size_t>& inactive_indices() const { return inactive_; }
    std::size_t inactive_count() const { return inactive_.size(); }

    bool has_predictor_scores() const { return predictor_scores_.has_value(); }
    const std::vector<double>& predictor_scores() const {
        if (!predictor_scores_)
            throw InputError("LabeledPool: predictor scores required but not supplied");
        return *predictor_scores_;
    }

    /// Same rows with replaced predictor scores.
    LabeledPool with_predictor_scores(std::vector<double> scores) const {
        return LabeledPool(features_, labels_, std::move(scores));
    }

private:
    std::vector<FeatureVector> features_;
    std::vector<int> labels_;
    std::optional<std::vector<double>> predictor_scores_;
    std::vector<std::size_t> inactive_;
    std::size_t dimension_ = 0;
};

/// Generated candidates in generation order. The order is load-bearing:
/// the design procedure operates on prefixes of it.
class CandidateBatch {
public:
    CandidateBatch(std::vector<FeatureVector> features, std::vector<double> predictor_scores)
        : features_(std::move(features)), predictor_scores_(std::move(predictor_scores)) {
        if (features_.empty()) throw InputError("CandidateBatch: needs at least one row");
        dimension_ = features_.front().size();
        detail::check_rows(features_, dimension_, "CandidateBatch");
        if (predictor_scores_.size() != features_.size())
            throw InputError("CandidateBatch: predictor score count does not match row count");
        for (std::size_t j = 0; j < predictor_scores_.size(); ++j)
            if (!std::isfinite(predictor_scores_[j]))
                throw InputError("CandidateBatch: non-finite predictor score at row " +
                                 std::to_string(j));
    }

    std::size_t size() const { return features_.size(); }
    std::size_t dimension() const { return dimension_; }
    const std::vector<FeatureVector>& features() const { return features_; }
    const FeatureVector& feature(std::size_t j) const { return features_[j]; }
    const std::vector<double>& predictor_scores() const { return predictor_scores_; }

    /// Candidates at the given row indices, order preserved.
    CandidateBatch subset(const std::vector<std::size_t>& keep) const {
        std::vector<FeatureVector> f;
        std::vector<double> s;
        f.reserve(keep.size());
        s.reserve(keep.size());
        for (std::size_t j : keep) {
            if (j >= size()) throw InputError("CandidateBatch::subset: index out of range");
            f.push_back(features_[j]);
            s.push_back(predictor_scores_[j]);
        }
        return CandidateBatch(std::move(f), std::move(s));
    }

    CandidateBatch with_predictor_scores(std::vector<double> scores) const {
        return CandidateBatch(features_, std::move(scores));
    }

private:
    std::vector<FeatureVector> features_;
    std::vector<double> predictor_scores_;
    std::size_t dimension_ = 0;
};

/// Result of validate_pair. Report-style: downstream operations reject on
/// ok == false instead of this function throwing.
struct ValidationReport {
    bool ok = true;
    std::size_t n0 = 0;
    std::vector<std::string> issues;
};

inline ValidationReport validate_pair(const LabeledPool& pool, const CandidateBatch& batch) {
    ValidationReport report;
    report.n0 = pool.inactive_count();
    if (pool.dimension() != batch.dimension())
        report.issues.push_back("dimension mismatch: pool d=" + std::to_string(pool.dimension()) +
                                ", batch d=" + std::to_string(batch.dimension()));
    if (pool.inactive_count() == 0)
        report.issues.push_back("empty inactive set: every calibration label is 1");
    if (!pool.has_predictor_scores())
        report.issues.push_back("missing predictor scores on calibration pool");
    for (std::size_t i = 0; i < pool.size(); ++i)
        if (!detail::all_finite(pool.feature(i)))
            report.issues.push_back("non-finite entry in pool row " + std::to_string(i));
    for (std::size_t j = 0; j < batch.size(); ++j)
        if (!detail::all_finite(batch.feature(j)))
            report.issues.push_back("non-finite entry in batch row " + std::to_string(j));
    report.ok = report.issues.empty();
    return report;
}

} // namespace hitcert

#endif // HITCERT_CORE_HPP
