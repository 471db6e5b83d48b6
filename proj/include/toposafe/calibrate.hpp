#pragma once

// Probabilistic safety regions for an adjustable classifier: probabilistic
// scaling (order statistic of unsafe calibration offsets) and split conformal
// prediction with the conformal safety region.
//
// Models only need `double decision_value(std::span<const double>) const`.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <boost/math/distributions/binomial.hpp>
#include <json.hpp>

#include "toposafe/core.hpp"
#include "toposafe/eval.hpp"
#include "toposafe/features.hpp"

namespace toposafe::calibrate {

template <class M>
concept DecisionModel = requires(const M& m, std::span<const double> x) {
	{ m.decision_value(x) } -> std::convertible_to<double>;
};

template <DecisionModel M>
double rho_bar_of(const M& m, std::span<const double> x) {
	return -m.decision_value(x);
}

template <DecisionModel M>
std::vector<double> rho_bars(const M& m, std::span<const features::LabeledSample> data) {
	std::vector<double> out;
	out.reserve(data.size());
	for (const auto& s : data) out.push_back(rho_bar_of(m, s.x));
	return out;
}

inline std::vector<Label> labels_of(std::span<const features::LabeledSample> data) {
	std::vector<Label> out;
	out.reserve(data.size());
	for (const auto& s : data) out.push_back(s.y);
	return out;
}

enum class RankRule {
	exact_binomial, // largest r with BinomCDF(r-1; n, eps) <= delta
	half_eps_n,     // r = floor(eps * n / 2)
};

inline double binomial_cdf(long long k, long long n, double p) {
	if (k < 0) return 0.0;
	if (k >= n) return 1.0;
	return boost::math::cdf(boost::math::binomial_distribution<double>(static_cast<double>(n), p),
	                        static_cast<double>(k));
}

// Discard rank for the generalized maximum. Throws when no rank >= 1
// satisfies the tail bound.
inline long long scaling_rank(long long n, double eps, double delta, RankRule rule = RankRule::exact_binomial) {
	if (rule == RankRule::half_eps_n) {
		const auto r = static_cast<long long>(std::floor(eps * static_cast<double>(n) / 2.0));
		if (r < 1) throw DataError("calibration set too small for r = floor(eps*n/2) >= 1");
		return r;
	}
	// The CDF is increasing in r, so scan upward until it exceeds delta.
	long long r = 0;
	while (r < n && binomial_cdf(r, n, eps) <= delta) ++r;
	if (r < 1)
		throw DataError("no discard rank satisfies the binomial tail bound with n_c = " + std::to_string(n) +
		                "; use a larger calibration set (need (1-eps)^n_c <= delta)");
	return r;
}

inline long long min_unsafe_calibration(double eps) { return static_cast<long long>(std::ceil(2.0 / eps)); }

struct ScalingRegion {
	double rho_eps = 0.0;
	double eps = 0.1;
	double delta = 1e-3;
	long long r = 1;
	long long n_cal_unsafe = 0;
	long long n_cal = 0;

	template <DecisionModel M>
	bool contains(const M& m, std::span<const double> x) const {
		return m.decision_value(x) + rho_eps < 0.0;
	}
	bool contains_rho_bar(double rb) const { return rb > rho_eps; }
};

inline ScalingRegion probabilistic_scaling(std::span<const double> rho_bar, std::span<const Label> y, double eps,
                                           double delta, RankRule rule = RankRule::exact_binomial) {
	if (!(eps > 0.0 && eps < 1.0)) throw ConfigError("eps must be in (0,1)");
	if (!(delta > 0.0 && delta < 1.0)) throw ConfigError("delta must be in (0,1)");
	if (rho_bar.size() != y.size()) throw DataError("probabilistic_scaling: size mismatch");
	std::vector<double> gamma;
	for (std::size_t i = 0; i < y.size(); ++i)
		if (y[i] == Label::unsafe) gamma.push_back(rho_bar[i]);
	const auto n_c = static_cast<long long>(gamma.size());
	const long long need = min_unsafe_calibration(eps);
	if (n_c < need)
		throw DataError("probabilistic scaling needs at least " + std::to_string(need) +
		                " unsafe calibration samples, got " + std::to_string(n_c));
	ScalingRegion reg;
	reg.eps = eps;
	reg.delta = delta;
	reg.n_cal_unsafe = n_c;
	reg.n_cal = static_cast<long long>(y.size());
	reg.r = scaling_rank(n_c, eps, delta, rule);
	std::sort(gamma.begin(), gamma.end(), std::greater<>());
	reg.rho_eps = gamma[static_cast<std::size_t>(reg.r - 1)];
	return reg;
}

template <DecisionModel M>
ScalingRegion probabilistic_scaling(const M& m, std::span<const features::LabeledSample> cal, double eps,
                                    double delta, RankRule rule = RankRule::exact_binomial) {
	return probabilistic_scaling(rho_bars(m, cal), labels_of(cal), eps, delta, rule);
}

struct ConformalCalibration {
	double s_eps = 0.0;
	double eps = 0.1;
	long long n_cal = 0;
	long long k = 0; // rank of s_eps among sorted scores (1-based)

	// Sigma_eps coincides with S(-s_eps) only when s_eps <= 0.
	bool discrepancy() const { return s_eps > 0.0; }
};

inline double conformal_score(double rho_bar, Label candidate) { return -static_cast<double>(to_int(candidate)) * rho_bar; }

inline long long conformal_rank(long long n, double eps) {
	return static_cast<long long>(std::ceil(static_cast<double>(n + 1) * (1.0 - eps) - 1e-9));
}

inline ConformalCalibration conformal_calibrate(std::span<const double> rho_bar, std::span<const Label> y, double eps) {
	if (!(eps > 0.0 && eps < 1.0)) throw ConfigError("eps must be in (0,1)");
	if (rho_bar.size() != y.size()) throw DataError("conformal_calibrate: size mismatch");
	const auto n = static_cast<long long>(y.size());
	const long long k = conformal_rank(n, eps);
	if (n == 0 || k > n || k < 1)
		throw DataError("conformal calibration needs n_cal >= " +
		                std::to_string(static_cast<long long>(std::ceil(1.0 / eps)) - 1) + ", got " +
		                std::to_string(n));
	std::vector<double> scores(y.size());
	for (std::size_t i = 0; i < y.size(); ++i) scores[i] = conformal_score(rho_bar[i], y[i]);
	std::nth_element(scores.begin(), scores.begin() + (k - 1), scores.end());
	return {scores[static_cast<std::size_t>(k - 1)], eps, n, k};
}

template <DecisionModel M>
ConformalCalibration conformal_calibrate(const M& m, std::span<const features::LabeledSample> cal, double eps) {
	return conformal_calibrate(rho_bars(m, cal), labels_of(cal), eps);
}

struct LabelSet {
	bool safe = false;
	bool unsafe = false;

	bool empty() const { return !safe && !unsafe; }
	bool contains(Label y) const { return y == Label::safe ? safe : unsafe; }
};

inline LabelSet conformal_set(const ConformalCalibration& c, double rho_bar) {
	return {conformal_score(rho_bar, Label::safe) <= c.s_eps, conformal_score(rho_bar, Label::unsafe) <= c.s_eps};
}

template <DecisionModel M>
LabelSet conformal_region(const ConformalCalibration& c, const M& m, std::span<const double> x) {
	return conformal_set(c, rho_bar_of(m, x));
}

// x in Sigma_eps: +1 is the only conformal label.
inline bool csr_contains(const ConformalCalibration& c, double rho_bar) {
	const LabelSet s = conformal_set(c, rho_bar);
	return s.safe && !s.unsafe;
}

template <DecisionModel M>
bool csr_membership(const ConformalCalibration& c, const M& m, std::span<const double> x) {
	return csr_contains(c, rho_bar_of(m, x));
}

// Safe set S(rho): rho < rho_bar(x).
inline bool in_safe_set(double rho_bar, double rho) { return rho < rho_bar; }

struct RegionReport {
	eval::MetricsReport metrics;
	std::optional<double> eps_hat; // fraction of region members that are unsafe
	long long n_members = 0;
};

// Region membership is the +1 prediction.
template <class InRegion>
RegionReport validate_region(InRegion&& in_region, std::span<const features::LabeledSample> test) {
	std::vector<Label> pred, truth;
	pred.reserve(test.size());
	truth.reserve(test.size());
	long long members = 0, unsafe_members = 0;
	for (const auto& s : test) {
		const bool in = in_region(std::span<const double>(s.x));
		pred.push_back(in ? Label::safe : Label::unsafe);
		truth.push_back(s.y);
		if (in) {
			++members;
			unsafe_members += (s.y == Label::unsafe);
		}
	}
	RegionReport r;
	r.metrics = eval::confusion_metrics(pred, truth);
	r.n_members = members;
	if (members > 0) r.eps_hat = static_cast<double>(unsafe_members) / static_cast<double>(members);
	return r;
}

inline nlohmann::json to_json(const RegionReport& r) {
	return {{"metrics", eval::to_json(r.metrics)}, {"eps_hat", eval::opt_json(r.eps_hat)}, {"n_members", r.n_members}};
}

inline nlohmann::json to_json(const ScalingRegion& s) {
	return {{"method", "PS"},         {"rho_eps", s.rho_eps}, {"eps", s.eps},
	        {"delta", s.delta},       {"r", s.r},             {"n_cal_unsafe", s.n_cal_unsafe},
	        {"n_cal", s.n_cal}};
}

inline nlohmann::json to_json(const ConformalCalibration& c) {
	return {{"method", "CP"}, {"s_eps", c.s_eps}, {"eps", c.eps},
	        {"n_cal", c.n_cal}, {"k", c.k},       {"discrepancy", c.discrepancy()}};
}

inline ScalingRegion scaling_from_json(const nlohmann::json& j) {
	try {
		if (j.at("method") != "PS") throw DataError("region json is not a PS region");
		ScalingRegion s;
		s.rho_eps = j.at("rho_eps").get<double>();
		s.eps = j.at("eps").get<double>();
		s.delta = j.at("delta").get<double>();
		s.r = j.at("r").get<long long>();
		s.n_cal_unsafe = j.at("n_cal_unsafe").get<long long>();
		s.n_cal = j.at("n_cal").get<long long>();
		return s;
	} catch (const nlohmann::json::exception& e) {
		throw DataError(std::string("corrupt region json: ") + e.what());
	}
}

inline ConformalCalibration conformal_from_json(const nlohmann::json& j) {
	try {
		if (j.at("method") != "CP") throw DataError("region json is not a CP region");
		ConformalCalibration c;
		c.s_eps = j.at("s_eps").get<double>();
		c.eps = j.at("eps").get<double>();
		c.n_cal = j.at("n_cal").get<long long>();
		c.k = j.at("k").get<long long>();
		return c;
	} catch (const nlohmann::json::exception& e) {
		throw DataError(std::string("corrupt region json: ") + e.what());
	}
}

} // namespace toposafe::calibrate
