#pragma once

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "beamvista/error.hpp"

namespace beamvista::eval {

using Ranked = std::vector<std::vector<int>>;

namespace detail {

inline void check_lengths(const Ranked& preds, const std::vector<int>& labels) {
    if (preds.size() != labels.size())
        throw InputDomainError("prediction count " + std::to_string(preds.size()) + " does not match label count " +
                               std::to_string(labels.size()));
}

}  // namespace detail

inline double topk_accuracy(const Ranked& preds, const std::vector<int>& labels, int k) {
    detail::check_lengths(preds, labels);
    if (k < 1) throw InputDomainError("k must be at least 1");
    if (preds.empty()) throw DataError("cannot score an empty prediction set");
    std::size_t hits = 0;
    for (std::size_t i = 0; i < preds.size(); ++i) {
        if (static_cast<int>(preds[i].size()) < k) throw InputDomainError("ranked list shorter than k");
        if (std::find(preds[i].begin(), preds[i].begin() + k, labels[i]) != preds[i].begin() + k) ++hits;
    }
    return double(hits) / double(preds.size());
}

// counts[true][predicted] over top-1 predictions.
using Matrix = std::vector<std::vector<std::uint64_t>>;

inline Matrix confusion_matrix(const Ranked& preds, const std::vector<int>& labels, int q) {
    detail::check_lengths(preds, labels);
    Matrix m(q, std::vector<std::uint64_t>(q, 0));
    for (std::size_t i = 0; i < preds.size(); ++i) {
        if (preds[i].empty()) throw InputDomainError("empty ranked list");
        const int y = labels[i], p = preds[i][0];
        if (y < 0 || y >= q || p < 0 || p >= q) throw InputDomainError("beam index outside [0, Q)");
        ++m[y][p];
    }
    return m;
}

struct Range {
    int lo = 0;  // inclusive
    int hi = 0;  // exclusive
};

struct RangeResult {
    Range range;
    std::uint64_t count = 0;
    std::optional<double> top1;  // none when the range holds no samples
};

inline std::vector<Range> default_ranges(int q, int bins = 4) {
    if (q < bins) throw InputDomainError("fewer beams than range bins");
    std::vector<Range> r;
    for (int b = 0; b < bins; ++b) r.push_back({q * b / bins, q * (b + 1) / bins});
    return r;
}

inline void validate_ranges(std::vector<Range> ranges, int q) {
    if (ranges.empty()) throw ConfigError("range list is empty");
    std::sort(ranges.begin(), ranges.end(), [](const Range& a, const Range& b) { return a.lo < b.lo; });
    for (std::size_t i = 0; i < ranges.size(); ++i) {
        if (ranges[i].lo < 0 || ranges[i].hi > q || ranges[i].lo >= ranges[i].hi)
            throw ConfigError("range [" + std::to_string(ranges[i].lo) + ", " + std::to_string(ranges[i].hi) +
                              ") is empty or outside [0, Q)");
        if (i > 0 && ranges[i].lo < ranges[i - 1].hi) throw ConfigError("ranges overlap");
    }
}

inline std::vector<RangeResult> range_accuracy(const Ranked& preds, const std::vector<int>& labels,
                                               const std::vector<Range>& ranges, int q) {
    detail::check_lengths(preds, labels);
    validate_ranges(ranges, q);
    std::vector<RangeResult> out;
    for (const auto& r : ranges) {
        RangeResult res{r, 0, std::nullopt};
        std::uint64_t hits = 0;
        for (std::size_t i = 0; i < preds.size(); ++i) {
            if (labels[i] < r.lo || labels[i] >= r.hi) continue;
            ++res.count;
            if (!preds[i].empty() && preds[i][0] == labels[i]) ++hits;
        }
        if (res.count > 0) res.top1 = double(hits) / double(res.count);
        out.push_back(res);
    }
    return out;
}

// Fraction of top-1 errors within w beams of the label; none without errors.
inline std::optional<double> error_locality(const Ranked& preds, const std::vector<int>& labels, int w) {
    detail::check_lengths(preds, labels);
    if (w < 0) throw InputDomainError("window must be non-negative");
    std::uint64_t errors = 0, near = 0;
    for (std::size_t i = 0; i < preds.size(); ++i) {
        if (preds[i].empty()) throw InputDomainError("empty ranked list");
        const int p = preds[i][0];
        if (p == labels[i]) continue;
        ++errors;
        if (std::abs(p - labels[i]) <= w) ++near;
    }
    if (errors == 0) return std::nullopt;
    return double(near) / double(errors);
}

struct MetricsReport {
    std::vector<int> ks;
    std::vector<double> topk;
    Matrix confusion;
    std::vector<RangeResult> ranges;
    std::optional<double> locality;
    int locality_window = 3;
    std::size_t num_samples = 0;
};

inline MetricsReport evaluate(const Ranked& preds, const std::vector<int>& labels, int q,
                              const std::vector<int>& ks, const std::vector<Range>& ranges, int window = 3) {
    MetricsReport r;
    r.ks = ks;
    for (int k : ks) r.topk.push_back(topk_accuracy(preds, labels, k));
    r.confusion = confusion_matrix(preds, labels, q);
    r.ranges = range_accuracy(preds, labels, ranges, q);
    r.locality = error_locality(preds, labels, window);
    r.locality_window = window;
    r.num_samples = preds.size();
    return r;
}

struct SweepRow {
    double fraction = 0;
    std::size_t train_samples = 0;
    double top1 = 0;
    double top3 = 0;
};

// Runs train_and_eval(fraction) for each fraction; it returns (top-1, top-3,
// train size).
template <typename Fn>
std::vector<SweepRow> data_fraction_sweep(const std::vector<double>& fractions, Fn&& train_and_eval) {
    if (fractions.empty()) throw ConfigError("no sweep fractions given");
    for (std::size_t i = 0; i < fractions.size(); ++i) {
        if (!(fractions[i] > 0 && fractions[i] <= 1)) throw ConfigError("sweep fractions must lie in (0, 1]");
        if (i > 0 && fractions[i] <= fractions[i - 1]) throw ConfigError("sweep fractions must be strictly increasing");
    }
    std::vector<SweepRow> rows;
    for (double f : fractions) {
        const auto [top1, top3, n] = train_and_eval(f);
        rows.push_back({f, n, top1, top3});
    }
    return rows;
}

// Writers -------------------------------------------------------------------

inline nlohmann::json opt_json(const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); }

inline std::string opt_csv(const std::optional<double>& v) {
    if (!v) return "";
    std::ostringstream s;
    s.precision(10);
    s << *v;
    return s.str();
}

inline nlohmann::json to_json(const MetricsReport& r) {
    nlohmann::json topk = nlohmann::json::object();
    for (std::size_t i = 0; i < r.ks.size(); ++i) topk["top" + std::to_string(r.ks[i])] = r.topk[i];
    nlohmann::json ranges = nlohmann::json::array();
    for (const auto& x : r.ranges)
        ranges.push_back({{"lo", x.range.lo}, {"hi", x.range.hi}, {"count", x.count}, {"top1", opt_json(x.top1)}});
    return {{"num_samples", r.num_samples},
            {"topk", topk},
            {"ranges", ranges},
            {"error_locality", {{"window", r.locality_window}, {"fraction", opt_json(r.locality)}}},
            {"confusion", r.confusion}};
}

inline std::string topk_csv(const MetricsReport& r) {
    std::ostringstream s;
    s.precision(10);
    s << "k,accuracy\n";
    for (std::size_t i = 0; i < r.ks.size(); ++i) s << r.ks[i] << ',' << r.topk[i] << '\n';
    return s.str();
}

inline std::string confusion_csv(const Matrix& m) {
    std::ostringstream s;
    s << "true\\predicted";
    for (std::size_t j = 0; j < m.size(); ++j) s << ',' << j;
    s << '\n';
    for (std::size_t i = 0; i < m.size(); ++i) {
        s << i;
        for (auto v : m[i]) s << ',' << v;
        s << '\n';
    }
    return s.str();
}

inline std::string ranges_csv(const std::vector<RangeResult>& rs) {
    std::ostringstream s;
    s << "lo,hi,count,top1\n";
    for (const auto& r : rs) s << r.range.lo << ',' << r.range.hi << ',' << r.count << ',' << opt_csv(r.top1) << '\n';
    return s.str();
}

inline std::string sweep_csv(const std::vector<SweepRow>& rows) {
    std::ostringstream s;
    s.precision(10);
    s << "fraction,train_samples,top1,top3\n";
    for (const auto& r : rows) s << r.fraction << ',' << r.train_samples << ',' << r.top1 << ',' << r.top3 << '\n';
    return s.str();
}

}  // namespace beamvista::eval
