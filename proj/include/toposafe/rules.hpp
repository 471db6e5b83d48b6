#pragma once

// Interpretable rules: bagged-tree global rule induction, Anchors-style local
// rules with Clopper-Pearson certification, and coverage/error/relevance.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <boost/math/special_functions/beta.hpp>
#include <json.hpp>

#include "toposafe/core.hpp"
#include "toposafe/eval.hpp"
#include "toposafe/features.hpp"

namespace toposafe::rules {

// lo < x <= hi; a missing bound is unbounded.
struct Interval {
	std::optional<double> lo;
	std::optional<double> hi;

	bool contains(double v) const { return (!lo || v > *lo) && (!hi || v <= *hi); }
	bool unbounded() const { return !lo && !hi; }
	bool empty() const { return lo && hi && *hi <= *lo; }

	Interval intersect(const Interval& o) const {
		Interval r = *this;
		if (o.lo) r.lo = lo ? std::max(*lo, *o.lo) : *o.lo;
		if (o.hi) r.hi = hi ? std::min(*hi, *o.hi) : *o.hi;
		return r;
	}

	friend bool operator==(const Interval&, const Interval&) = default;
};

struct Condition {
	std::size_t feature = 0;
	Interval interval;

	friend bool operator==(const Condition&, const Condition&) = default;
};

struct Rule {
	std::vector<Condition> conditions; // sorted by feature, one per feature
	Label predicted = Label::safe;

	void add(std::size_t feature, const Interval& iv) {
		for (auto& c : conditions)
			if (c.feature == feature) {
				c.interval = c.interval.intersect(iv);
				return;
			}
		conditions.push_back({feature, iv});
		std::sort(conditions.begin(), conditions.end(),
		          [](const Condition& a, const Condition& b) { return a.feature < b.feature; });
	}

	const Interval* find(std::size_t feature) const {
		for (const auto& c : conditions)
			if (c.feature == feature) return &c.interval;
		return nullptr;
	}

	bool satisfies(std::span<const double> x) const {
		for (const auto& c : conditions)
			if (!c.interval.contains(x[c.feature])) return false;
		return true;
	}

	friend bool operator==(const Rule&, const Rule&) = default;
};

inline std::string short_number(double v) {
	char buf[32];
	std::snprintf(buf, sizeof buf, "%.4g", v);
	return buf;
}

inline std::string to_text(const Rule& r, std::span<const std::string> names) {
	if (r.conditions.empty()) return "TRUE";
	std::string out;
	for (const auto& c : r.conditions) {
		const std::string& name = names[c.feature];
		auto append = [&](const std::string& term) {
			if (!out.empty()) out += " AND ";
			out += term;
		};
		if (c.interval.lo) append(name + " > " + short_number(*c.interval.lo));
		if (c.interval.hi) append(name + " <= " + short_number(*c.interval.hi));
	}
	return out;
}

inline nlohmann::json to_json(const Rule& r, std::span<const std::string> names) {
	nlohmann::json conds = nlohmann::json::array();
	for (const auto& c : r.conditions) {
		nlohmann::json jc{{"feature", names[c.feature]}, {"index", c.feature}};
		jc["lower_exclusive"] = c.interval.lo ? nlohmann::json(*c.interval.lo) : nlohmann::json(nullptr);
		jc["upper_inclusive"] = c.interval.hi ? nlohmann::json(*c.interval.hi) : nlohmann::json(nullptr);
		conds.push_back(jc);
	}
	return {{"conditions", conds}, {"predicted_class", to_int(r.predicted)}, {"text", to_text(r, names)}};
}

// ---- Coverage / error / relevance ------------------------------------------

// "Positive" means the premise holds. Fields with a zero denominator are empty.
struct RuleReport {
	std::optional<double> coverage; // TP / (TP + FN)
	std::optional<double> error;    // FP / (TN + FP)
	std::optional<double> relevance;
	eval::Confusion counts;
};

inline RuleReport rule_report(long long tp, long long fn, long long fp, long long tn) {
	RuleReport r;
	r.counts = {tp, fp, fn, tn};
	if (tp + fn > 0) r.coverage = static_cast<double>(tp) / static_cast<double>(tp + fn);
	if (tn + fp > 0) r.error = static_cast<double>(fp) / static_cast<double>(tn + fp);
	if (r.coverage && r.error) r.relevance = *r.coverage * (1.0 - *r.error);
	return r;
}

template <class Premise>
RuleReport premise_metrics(Premise&& holds, std::span<const std::vector<double>> x, std::span<const Label> y,
                           Label target) {
	if (x.empty() || x.size() != y.size()) throw DataError("rule_metrics: empty or mismatched data");
	long long tp = 0, fn = 0, fp = 0, tn = 0;
	for (std::size_t i = 0; i < x.size(); ++i) {
		const bool pos = holds(std::span<const double>(x[i]));
		if (y[i] == target) (pos ? tp : fn)++;
		else (pos ? fp : tn)++;
	}
	return rule_report(tp, fn, fp, tn);
}

inline RuleReport rule_metrics(const Rule& rule, std::span<const std::vector<double>> x, std::span<const Label> y) {
	return premise_metrics([&](std::span<const double> v) { return rule.satisfies(v); }, x, y, rule.predicted);
}

inline nlohmann::json to_json(const RuleReport& r) {
	return {{"coverage", eval::opt_json(r.coverage)},
	        {"error", eval::opt_json(r.error)},
	        {"relevance", eval::opt_json(r.relevance)},
	        {"tp", r.counts.tp},
	        {"fn", r.counts.fn},
	        {"fp", r.counts.fp},
	        {"tn", r.counts.tn}};
}

// ---- Global rules: bagged Gini trees, path extraction ----------------------

struct GlobalRuleOptions {
	Label target = Label::safe;
	int max_depth = 3;
	int n_trees = 10;
	double max_samples = 1.0; // bootstrap size as a fraction of n
	double precision_min = 0.5;
	double recall_min = 0.01;
	std::uint64_t seed = 0;

	void validate() const {
		if (max_depth < 1) throw ConfigError("rules.max_depth must be >= 1");
		if (n_trees < 1) throw ConfigError("rules.n_trees must be >= 1");
		if (!(max_samples > 0.0 && max_samples <= 1.0)) throw ConfigError("rules.max_samples must be in (0,1]");
		if (!(precision_min >= 0.0 && precision_min <= 1.0)) throw ConfigError("rules.precision_min must be in [0,1]");
		if (!(recall_min >= 0.0 && recall_min <= 1.0)) throw ConfigError("rules.recall_min must be in [0,1]");
	}
};

struct ScoredRule {
	Rule rule;
	double precision = 0.0; // out-of-bag
	double recall = 0.0;    // out-of-bag
};

struct GlobalRuleSet {
	std::vector<ScoredRule> rules;
	std::vector<std::string> diagnostics;

	bool fires(std::span<const double> x) const {
		return std::any_of(rules.begin(), rules.end(), [&](const ScoredRule& r) { return r.rule.satisfies(x); });
	}
};

namespace detail {

inline double gini(double pos, double neg) {
	const double n = pos + neg;
	if (n == 0.0) return 0.0;
	const double p = pos / n;
	return 2.0 * p * (1.0 - p);
}

struct TreeBuilder {
	std::span<const std::vector<double>> x;
	std::span<const Label> y;
	Label target;
	int max_depth;
	std::vector<Rule>* leaves;

	// Grows one node on `idx`; emits the path of every leaf whose majority
	// (ties to the non-target) is the target class.
	void grow(std::vector<std::size_t>& idx, const Rule& path, int depth) {
		double pos = 0, neg = 0;
		for (auto i : idx) (y[i] == target ? pos : neg) += 1.0;
		auto emit = [&] {
			if (pos > neg) leaves->push_back(path);
		};
		if (depth >= max_depth || pos == 0 || neg == 0 || idx.size() < 2) {
			emit();
			return;
		}
		const std::size_t d = x[idx.front()].size();
		const double parent = gini(pos, neg);
		double best_gain = 1e-12;
		std::size_t best_f = d;
		double best_t = 0.0;
		std::vector<std::size_t> order(idx);
		for (std::size_t f = 0; f < d; ++f) {
			std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
				if (x[a][f] != x[b][f]) return x[a][f] < x[b][f];
				return a < b;
			});
			double lp = 0, ln = 0;
			const double n = static_cast<double>(order.size());
			for (std::size_t k = 0; k + 1 < order.size(); ++k) {
				(y[order[k]] == target ? lp : ln) += 1.0;
				const double a = x[order[k]][f];
				const double b = x[order[k + 1]][f];
				if (a == b) continue;
				const double nl = lp + ln;
				const double nr = n - nl;
				const double child = (nl * gini(lp, ln) + nr * gini(pos - lp, neg - ln)) / n;
				const double gain = parent - child;
				if (gain > best_gain) {
					best_gain = gain;
					best_f = f;
					best_t = a + (b - a) / 2.0;
				}
			}
		}
		if (best_f == d) {
			emit();
			return;
		}
		std::vector<std::size_t> left, right;
		for (auto i : idx) (x[i][best_f] <= best_t ? left : right).push_back(i);
		Rule lp = path, rp = path;
		lp.add(best_f, Interval{std::nullopt, best_t});
		rp.add(best_f, Interval{best_t, std::nullopt});
		grow(left, lp, depth + 1);
		grow(right, rp, depth + 1);
	}
};

} // namespace detail

inline GlobalRuleSet induce_global_rules(std::span<const std::vector<double>> x, std::span<const Label> y,
                                         const GlobalRuleOptions& opt) {
	opt.validate();
	if (x.empty() || x.size() != y.size()) throw DataError("induce_global_rules: empty or mismatched data");
	const bool has_pos = std::find(y.begin(), y.end(), Label::safe) != y.end();
	const bool has_neg = std::find(y.begin(), y.end(), Label::unsafe) != y.end();
	if (!has_pos || !has_neg) throw DataError("induce_global_rules: dataset must contain both classes");

	const std::size_t n = x.size();
	const auto draw = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(opt.max_samples * static_cast<double>(n))));
	std::mt19937_64 rng(opt.seed);
	std::uniform_int_distribution<std::size_t> pick(0, n - 1);

	GlobalRuleSet out;
	for (int t = 0; t < opt.n_trees; ++t) {
		std::vector<std::size_t> bag(draw);
		std::vector<char> in_bag(n, 0);
		for (auto& b : bag) {
			b = pick(rng);
			in_bag[b] = 1;
		}
		std::vector<Rule> leaves;
		Rule root;
		root.predicted = opt.target;
		detail::TreeBuilder{x, y, opt.target, opt.max_depth, &leaves}.grow(bag, root, 0);

		// Out-of-bag scoring; fall back to the full data when the bag covers it.
		std::vector<std::size_t> oob;
		for (std::size_t i = 0; i < n; ++i)
			if (!in_bag[i]) oob.push_back(i);
		if (oob.empty()) {
			oob.resize(n);
			std::iota(oob.begin(), oob.end(), std::size_t{0});
		}
		for (auto& leaf : leaves) {
			long long tp = 0, fp = 0, pos = 0;
			for (auto i : oob) {
				const bool target = y[i] == opt.target;
				pos += target;
				if (leaf.satisfies(x[i])) (target ? tp : fp)++;
			}
			const double precision = tp + fp > 0 ? static_cast<double>(tp) / static_cast<double>(tp + fp) : 0.0;
			const double recall = pos > 0 ? static_cast<double>(tp) / static_cast<double>(pos) : 0.0;
			if (tp + fp == 0 || precision < opt.precision_min || recall < opt.recall_min) continue;
			auto same = std::find_if(out.rules.begin(), out.rules.end(),
			                         [&](const ScoredRule& s) { return s.rule == leaf; });
			if (same == out.rules.end()) out.rules.push_back({leaf, precision, recall});
			else if (precision > same->precision) *same = {leaf, precision, recall};
		}
	}
	std::sort(out.rules.begin(), out.rules.end(), [](const ScoredRule& a, const ScoredRule& b) {
		if (a.precision != b.precision) return a.precision > b.precision;
		return a.recall > b.recall;
	});
	if (out.rules.empty())
		out.diagnostics.push_back("no rule passed precision_min/recall_min; relax the filters or deepen the trees");
	return out;
}

// ---- Local rules: Anchors ---------------------------------------------------

// Clopper-Pearson one-sided bounds at level 1 - delta.
inline double clopper_pearson_lower(long long k, long long n, double delta) {
	if (k <= 0) return 0.0;
	return boost::math::ibeta_inv(static_cast<double>(k), static_cast<double>(n - k + 1), delta);
}

inline double clopper_pearson_upper(long long k, long long n, double delta) {
	if (k >= n) return 1.0;
	return boost::math::ibeta_inv(static_cast<double>(k + 1), static_cast<double>(n - k), 1.0 - delta);
}

// Empirical marginals and equal-frequency bin edges of a reference dataset.
class PerturbationModel {
public:
	PerturbationModel(std::span<const std::vector<double>> data, int bins) {
		if (data.empty()) throw DataError("perturbation model needs data");
		if (bins < 2) throw ConfigError("anchors.bins must be >= 2");
		const std::size_t d = data.front().size();
		columns_.resize(d);
		edges_.resize(d);
		for (std::size_t k = 0; k < d; ++k) {
			auto& col = columns_[k];
			for (const auto& row : data) col.push_back(row[k]);
			std::sort(col.begin(), col.end());
			for (int j = 1; j < bins; ++j) {
				const double e = features::quantile_sorted(col, static_cast<double>(j) / bins);
				if (e > col.front() && e < col.back() && (edges_[k].empty() || e > edges_[k].back()))
					edges_[k].push_back(e);
			}
		}
		rows_.assign(data.begin(), data.end());
	}

	std::size_t dim() const { return columns_.size(); }
	const std::vector<double>& edges(std::size_t k) const { return edges_[k]; }
	std::span<const std::vector<double>> rows() const { return rows_; }

	// Draw feature k from its marginal restricted to iv (or `fallback` if
	// no reference value lies in iv).
	double sample(std::size_t k, const Interval& iv, double fallback, std::mt19937_64& rng) const {
		const auto& col = columns_[k];
		auto first = col.begin();
		auto last = col.end();
		if (iv.lo) first = std::upper_bound(col.begin(), col.end(), *iv.lo);
		if (iv.hi) last = std::upper_bound(col.begin(), col.end(), *iv.hi);
		if (first >= last) return fallback;
		std::uniform_int_distribution<std::ptrdiff_t> pick(0, (last - first) - 1);
		return first[pick(rng)];
	}

	double coverage(const Rule& r) const {
		std::size_t hit = 0;
		for (const auto& row : rows_) hit += r.satisfies(row);
		return static_cast<double>(hit) / static_cast<double>(rows_.size());
	}

private:
	std::vector<std::vector<double>> columns_;
	std::vector<std::vector<double>> edges_;
	std::vector<std::vector<double>> rows_;
};

struct AnchorOptions {
	double lambda_prec = 0.95;
	double delta = 0.05;
	int bins = 8;
	long long batch = 500;
	long long max_samples = 10'000; // per candidate
	int max_depth = 8;              // predicates added
	std::uint64_t seed = 0;

	void validate() const {
		if (!(lambda_prec > 0.0 && lambda_prec < 1.0)) throw ConfigError("anchors.lambda_prec must be in (0,1)");
		if (!(delta > 0.0 && delta < 1.0)) throw ConfigError("anchors.delta must be in (0,1)");
		if (batch < 1 || max_samples < batch) throw ConfigError("anchors: need 1 <= batch <= max_samples");
		if (max_depth < 1) throw ConfigError("anchors.max_depth must be >= 1");
	}
};

struct Anchor {
	Rule rule;
	double precision = 0.0;    // empirical, under D_x(z|A)
	double precision_lb = 0.0; // Clopper-Pearson at 1 - delta
	double coverage = 0.0;     // fraction of reference rows satisfying the rule
	long long samples = 0;
	double confidence_delta = 0.05;
	bool certified = false;
};

using Predictor = std::function<Label(std::span<const double>)>;

namespace detail {

struct Arm {
	Rule rule;
	long long n = 0;
	long long hits = 0;
	double lb = 0.0, ub = 1.0;

	double mean() const { return n ? static_cast<double>(hits) / static_cast<double>(n) : 0.0; }
};

} // namespace detail

// Greedy bottom-up search: extend the current anchor by the predicate with
// the best precision lower bound until some candidate is certified; among
// certified candidates return the one with the largest coverage.
inline Anchor find_anchor(std::span<const double> x, const Predictor& predictor, const PerturbationModel& model,
                          const AnchorOptions& opt) {
	opt.validate();
	if (x.size() != model.dim()) throw DataError("find_anchor: dimension mismatch");
	const Label target = predictor(x);
	std::mt19937_64 rng(opt.seed);
	std::vector<double> z(x.size());

	auto pull = [&](detail::Arm& arm, long long m) {
		for (long long s = 0; s < m; ++s) {
			for (std::size_t k = 0; k < x.size(); ++k) {
				const Interval* iv = arm.rule.find(k);
				z[k] = model.sample(k, iv ? *iv : Interval{}, x[k], rng);
			}
			arm.hits += predictor(z) == target;
		}
		arm.n += m;
		arm.lb = clopper_pearson_lower(arm.hits, arm.n, opt.delta);
		arm.ub = clopper_pearson_upper(arm.hits, arm.n, opt.delta);
	};

	auto extensions = [&](const Rule& base) {
		std::vector<detail::Arm> out;
		for (std::size_t k = 0; k < x.size(); ++k) {
			const Interval* cur = base.find(k);
			for (double e : model.edges(k)) {
				// x > e for edges below x, x <= e for edges at or above it.
				const Interval add = x[k] > e ? Interval{e, std::nullopt} : Interval{std::nullopt, e};
				const Interval merged = cur ? cur->intersect(add) : add;
				if (cur && merged == *cur) continue;
				detail::Arm arm;
				arm.rule = base;
				arm.rule.add(k, add);
				out.push_back(std::move(arm));
			}
		}
		return out;
	};

	auto to_anchor = [&](const detail::Arm& a, bool certified) {
		Anchor an;
		an.rule = a.rule;
		an.precision = a.mean();
		an.precision_lb = a.lb;
		an.coverage = model.coverage(a.rule);
		an.samples = a.n;
		an.confidence_delta = opt.delta;
		an.certified = certified;
		return an;
	};

	Rule base;
	base.predicted = target;
	detail::Arm best_effort;
	best_effort.rule = base;
	for (int depth = 0; depth <= opt.max_depth; ++depth) {
		std::vector<detail::Arm> arms;
		if (depth == 0) {
			arms.emplace_back();
			arms.back().rule = base;
		} else {
			arms = extensions(base);
		}
		if (arms.empty()) break;
		for (auto& a : arms) pull(a, opt.batch);
		// Spend the remaining budget on the most promising undecided arm.
		for (;;) {
			detail::Arm* next = nullptr;
			for (auto& a : arms) {
				const bool undecided = a.lb < opt.lambda_prec && a.ub >= opt.lambda_prec && a.n < opt.max_samples;
				if (undecided && (!next || a.mean() > next->mean())) next = &a;
			}
			if (!next) break;
			pull(*next, std::min(opt.batch, opt.max_samples - next->n));
		}
		const detail::Arm* chosen = nullptr;
		double chosen_cov = -1.0;
		for (const auto& a : arms) {
			if (a.lb < opt.lambda_prec) continue;
			const double cov = model.coverage(a.rule);
			if (cov > chosen_cov || (cov == chosen_cov && a.lb > chosen->lb)) {
				chosen = &a;
				chosen_cov = cov;
			}
		}
		if (chosen) return to_anchor(*chosen, true);
		const auto top = std::max_element(arms.begin(), arms.end(), [](const auto& a, const auto& b) {
			if (a.lb != b.lb) return a.lb < b.lb;
			return a.mean() < b.mean();
		});
		best_effort = *top;
		base = top->rule;
	}
	return to_anchor(best_effort, false);
}

// Pool members inside the region whose boundary margin is at most d_max.
struct BoundarySelection {
	std::vector<std::size_t> indices;
	std::string diagnostic;
};

template <class InRegion, class Margin>
BoundarySelection boundary_instances(std::span<const std::vector<double>> pool, InRegion&& in_region,
                                     Margin&& margin, double d_max) {
	if (pool.empty()) throw DataError("boundary_instances: empty pool");
	BoundarySelection sel;
	for (std::size_t i = 0; i < pool.size(); ++i) {
		const std::span<const double> x(pool[i]);
		if (in_region(x) && std::abs(margin(x)) <= d_max) sel.indices.push_back(i);
	}
	if (sel.indices.empty())
		sel.diagnostic = "no region member within d_max = " + short_number(d_max) + " of the boundary; try a larger d_max";
	return sel;
}

// Union of anchors as a classifier for `target`, scored against `labels`.
inline RuleReport evaluate_anchor_union(std::span<const Anchor> anchors, std::span<const std::vector<double>> x,
                                        std::span<const Label> labels, Label target = Label::safe) {
	if (anchors.empty()) throw DataError("evaluate_anchor_union: no anchors");
	return premise_metrics(
		[&](std::span<const double> v) {
			return std::any_of(anchors.begin(), anchors.end(), [&](const Anchor& a) { return a.rule.satisfies(v); });
		},
		x, labels, target);
}

inline nlohmann::json to_json(const Anchor& a, std::span<const std::string> names) {
	auto j = to_json(a.rule, names);
	j["precision"] = a.precision;
	j["precision_lb"] = a.precision_lb;
	j["coverage"] = a.coverage;
	j["samples"] = a.samples;
	j["confidence_delta"] = a.confidence_delta;
	j["certified"] = a.certified;
	return j;
}

} // namespace toposafe::rules
