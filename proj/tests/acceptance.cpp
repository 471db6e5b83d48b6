// Acceptance run: one PASS/FAIL line per criterion; exit status 1 if any fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "toposafe/calibrate.hpp"
#include "toposafe/eval.hpp"
#include "toposafe/features.hpp"
#include "toposafe/pipeline.hpp"
#include "toposafe/rules.hpp"
#include "toposafe/sim.hpp"
#include "toposafe/svm.hpp"
#include "toposafe/tda.hpp"

using namespace toposafe;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

int failures = 0;

void verdict(int id, const std::string& name, bool pass, const std::string& detail) {
	std::printf("[%s] C%d %s: %s\n", pass ? "PASS" : "FAIL", id, name.c_str(), detail.c_str());
	std::fflush(stdout);
	failures += !pass;
}

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* f, auto... args) {
	char buf[512];
	std::snprintf(buf, sizeof buf, f, args...);
	return buf;
}

double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }

// ---- 1, 2: entropy ----------------------------------------------------------

void entropy_example() {
	const std::vector<double> l{1, 1, 2, 2, 8};
	const auto t0 = Clock::now();
	const double h = tda::persistent_entropy(l).h;
	const double ms = seconds_since(t0) * 1e3;
	verdict(1, "persistent-entropy worked example", std::abs(h - 1.2527) <= 0.005 && ms < 1.0,
	        fmt("H = %.6f (target 1.2527 +/- 0.005), %.4f ms", h, ms));
}

void entropy_extremes() {
	bool ok = tda::persistent_entropy(std::vector<double>{3.2}).h == 0.0;
	int worst = 0;
	for (int n = 1; n <= 200 && ok; ++n) {
		const std::vector<double> l(n, 0.731);
		if (tda::persistent_entropy(l).h != std::log(static_cast<double>(n))) {
			ok = false;
			worst = n;
		}
	}
	verdict(2, "entropy extremes", ok,
	        ok ? "H = ln n exactly for n = 1..200 equal bars; single bar H = 0" : fmt("mismatch at n = %d", worst));
}

// ---- 3: barcode oracle --------------------------------------------------------

void barcode_oracle() {
	const auto t0 = Clock::now();
	std::mt19937_64 rng(20240601);
	std::uniform_int_distribution<int> size(2, 64);
	std::uniform_real_distribution<double> u(-1.0, 1.0);
	double worst = 0.0;
	bool ok = true;
	for (int trial = 0; trial < 1000; ++trial) {
		PointCloud c(static_cast<std::size_t>(size(rng)));
		for (auto& p : c) p = {u(rng), u(rng)};
		auto deaths = [](const tda::Barcode& b) {
			std::vector<double> d;
			for (const auto& bar : b.bars) d.push_back(bar.death);
			std::sort(d.begin(), d.end());
			return d;
		};
		const auto a = deaths(tda::zero_dim_barcode(c));
		const auto b = deaths(tda::brute_force_zero_dim(c));
		if (a.size() != b.size() || a.size() != c.size() - 1) {
			ok = false;
			continue;
		}
		for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a[i] - b[i]));
	}
	const double s = seconds_since(t0);
	ok = ok && worst <= 1e-12 && s < 30.0;
	verdict(3, "barcode oracle equivalence", ok, fmt("1000 clouds, max |diff| = %.3g, %.2f s", worst, s));
}

// ---- 4: probabilistic scaling rank ----------------------------------------------

long long rank_by_summation(long long n, double eps, double delta) {
	long long r = 0;
	double cdf = 0.0;
	for (long long i = 0; i < n; ++i) {
		const double logp = std::lgamma(n + 1.0) - std::lgamma(i + 1.0) - std::lgamma(n - i + 1.0) +
		                    i * std::log(eps) + (n - i) * std::log1p(-eps);
		cdf += std::exp(logp); // cdf = P(X <= i)
		if (cdf <= delta) r = i + 1;
		else break;
	}
	return r;
}

void scaling_rank() {
	const long long r = calibrate::scaling_rank(100, 0.1, 0.05);
	const long long oracle = rank_by_summation(100, 0.1, 0.05);
	std::mt19937_64 rng(4);
	std::normal_distribution<double> g(-1.0, 1.0);
	std::vector<double> rb;
	std::vector<Label> y;
	for (int i = 0; i < 100; ++i) {
		rb.push_back(g(rng));
		y.push_back(Label::unsafe);
	}
	for (int i = 0; i < 60; ++i) {
		rb.push_back(g(rng) + 2.0);
		y.push_back(Label::safe);
	}
	const auto reg = calibrate::probabilistic_scaling(rb, y, 0.1, 0.05);
	long long inside = 0;
	for (std::size_t i = 0; i < rb.size(); ++i) inside += y[i] == Label::unsafe && reg.contains_rho_bar(rb[i]);
	verdict(4, "PS order-statistic correctness", r == oracle && reg.r == r && inside <= r - 1,
	        fmt("r = %lld, summation oracle r = %lld, unsafe calibration points inside S = %lld (<= %lld)", r, oracle,
	            inside, r - 1));
}

// ---- 5, 6: guarantees on a Gaussian toy problem -----------------------------------
// Balanced classes, x | y ~ N(mu*y, 1), fhat(x) = -x so rho_bar(x) = x.

constexpr double toy_mu = 2.0;

struct Toy {
	std::vector<double> x;
	std::vector<Label> y;
};

Toy draw_toy(std::size_t n, std::mt19937_64& rng) {
	std::bernoulli_distribution coin(0.5);
	std::normal_distribution<double> g(0.0, 1.0);
	Toy t;
	for (std::size_t i = 0; i < n; ++i) {
		const Label l = coin(rng) ? Label::safe : Label::unsafe;
		t.y.push_back(l);
		t.x.push_back(toy_mu * to_int(l) + g(rng));
	}
	return t;
}

void ps_guarantee() {
	const auto t0 = Clock::now();
	const int trials = 500;
	const double eps = 0.1, delta = 1e-3;
	std::mt19937_64 rng(5);
	int posterior_violations = 0, conditional_violations = 0;
	for (int k = 0; k < trials; ++k) {
		const auto cal = draw_toy(1000, rng);
		const auto reg = calibrate::probabilistic_scaling(cal.x, cal.y, eps, delta);
		// S = {x > rho_eps}.
		const double t = reg.rho_eps;
		const double p_s_unsafe = 1.0 - normal_cdf(t + toy_mu);
		const double p_s_safe = 1.0 - normal_cdf(t - toy_mu);
		const double posterior = p_s_unsafe / (p_s_unsafe + p_s_safe);
		posterior_violations += posterior > eps;
		conditional_violations += p_s_unsafe > eps;
	}
	const double freq = static_cast<double>(posterior_violations) / trials;
	const double bound = delta + 3.0 * std::sqrt(delta * (1.0 - delta) / trials);
	const double s = seconds_since(t0);
	verdict(5, "PS guarantee", freq <= 0.005 && s < 300.0,
	        fmt("P(y=-1|x in S) > 0.1 in %d/%d trials (%.2f%%, limit 0.5%%; delta+3SE = %.2f%%); "
	            "P(x in S|y=-1) > 0.1 in %d/%d; %.1f s",
	            posterior_violations, trials, 100.0 * freq, 100.0 * bound, conditional_violations, trials, s));
}

void conformal_coverage() {
	const auto t0 = Clock::now();
	const int trials = 500;
	const long long n_cal = 95;
	const double eps = 0.1;
	std::mt19937_64 rng(6);
	double sum = 0.0, sum2 = 0.0;
	for (int k = 0; k < trials; ++k) {
		const auto cal = draw_toy(n_cal, rng);
		const auto c = calibrate::conformal_calibrate(cal.x, cal.y, eps);
		// y=+1: -x <= s  <=> x >= -s;  y=-1: x <= s. Both have probability Phi(mu + s).
		const double cov = normal_cdf(toy_mu + c.s_eps);
		sum += cov;
		sum2 += cov * cov;
	}
	const double mean = sum / trials;
	const double se = std::sqrt((sum2 / trials - mean * mean) / (trials - 1));
	const double hi = 0.9 + 1.0 / (n_cal + 1) + 3.0 * se;
	const double s = seconds_since(t0);
	verdict(6, "conformal coverage", mean >= 0.9 && mean <= hi && s < 300.0,
	        fmt("mean coverage %.5f, SE %.5f, interval [0.90000, %.5f], n_cal = %lld; %.1f s", mean, se, hi, n_cal, s));
}

// ---- 7: CSR equality ----------------------------------------------------------------

void csr_equality() {
	std::mt19937_64 rng(7);
	std::normal_distribution<double> g(0.0, 0.7);
	auto draw = [&](int n, std::vector<std::vector<double>>& x, std::vector<Label>& y) {
		for (int i = 0; i < n; ++i) {
			const Label l = i % 2 ? Label::safe : Label::unsafe;
			const double m = l == Label::safe ? 1.0 : -1.0;
			x.push_back({m + g(rng), m + g(rng)});
			y.push_back(l);
		}
	};
	std::vector<std::vector<double>> xtr, xcal;
	std::vector<Label> ytr, ycal;
	draw(400, xtr, ytr);
	const auto model = svm::fit(xtr, ytr, svm::Hyperparams{});
	draw(2000, xcal, ycal);
	int calibrations = 0, used = 0;
	long long mismatches = 0, checked = 0;
	std::vector<double> cal_rb;
	for (const auto& x : xcal) cal_rb.push_back(model.rho_bar(x));
	for (double eps : {0.05, 0.1, 0.15, 0.2, 0.25, 0.3}) {
		for (int part = 0; part < 4; ++part) {
			++calibrations;
			const std::span<const double> rb(cal_rb.data() + part * 500, 500);
			const std::span<const Label> y(ycal.data() + part * 500, 500);
			const auto c = calibrate::conformal_calibrate(rb, y, eps);
			if (c.s_eps > 0.0) continue;
			++used;
			for (int i = 0; i < 100; ++i)
				for (int j = 0; j < 100; ++j) {
					const std::vector<double> x{-3.0 + 6.0 * i / 99.0, -3.0 + 6.0 * j / 99.0};
					const double r = model.rho_bar(x);
					mismatches += calibrate::csr_contains(c, r) != calibrate::in_safe_set(r, -c.s_eps);
					++checked;
				}
		}
	}
	verdict(7, "CSR equality", used > 0 && mismatches == 0,
	        fmt("%d of %d calibrations had s_eps <= 0; %lld grid memberships checked, %lld mismatches", used,
	            calibrations, checked, mismatches));
}

// ---- 8: rule metric identities -----------------------------------------------------

void rule_identities() {
	std::mt19937_64 rng(8);
	std::uniform_int_distribution<long long> cnt(0, 60);
	int bad = 0;
	for (int k = 0; k < 1000; ++k) {
		const long long tp = cnt(rng), fn = cnt(rng), fp = cnt(rng), tn = cnt(rng);
		const auto r = rules::rule_report(tp, fn, fp, tn);
		const bool cov_def = tp + fn > 0, err_def = tn + fp > 0;
		bool ok = r.coverage.has_value() == cov_def && r.error.has_value() == err_def;
		if (ok && cov_def) ok = *r.coverage == static_cast<double>(tp) / static_cast<double>(tp + fn);
		if (ok && err_def) ok = *r.error == static_cast<double>(fp) / static_cast<double>(tn + fp);
		if (ok && cov_def && err_def) ok = r.relevance && *r.relevance == *r.coverage * (1.0 - *r.error);
		bad += !ok;
	}
	verdict(8, "rule-metric identities", bad == 0, fmt("1000 random confusion matrices, %d mismatches", bad));
}

// ---- 9: anchor recovery -------------------------------------------------------------

void anchor_recovery() {
	const auto t0 = Clock::now();
	const rules::Predictor pred = [](std::span<const double> z) {
		return z[0] > 2.68 ? Label::safe : Label::unsafe;
	};
	int success = 0;
	for (int run = 0; run < 100; ++run) {
		std::mt19937_64 rng(9000 + run);
		std::normal_distribution<double> mean(2.7, 0.12), jitter(0.0, 0.02), spread(0.05, 0.01);
		std::vector<std::vector<double>> data;
		for (int i = 0; i < 1000; ++i) {
			const double m = mean(rng);
			data.push_back({m, m + jitter(rng), spread(rng), 1.3 * spread(rng)});
		}
		const rules::PerturbationModel pm(data, 8);
		rules::AnchorOptions opt;
		opt.seed = static_cast<std::uint64_t>(run);
		const std::vector<double> x{2.8, 2.8 + jitter(rng), spread(rng), 1.3 * spread(rng)};
		const auto a = rules::find_anchor(x, pred, pm, opt);
		const auto* iv = a.rule.find(0);
		success += a.certified && a.precision_lb >= 0.95 && iv && iv->lo.has_value();
	}
	const double s = seconds_since(t0);
	verdict(9, "anchor recovery", success >= 95 && s < 600.0,
	        fmt("%d/100 runs certified a mean_entropy lower bound at precision >= 0.95; %.1f s", success, s));
}

// ---- 10: end-to-end plausibility -------------------------------------------------------

struct Sweep {
	std::vector<features::RunSummary> topo, behavior;
};

Sweep run_sweep(double sigma_hi, std::uint64_t master_seed, int n_runs) {
	pipeline::Manifest m;
	m.scenario.n_steps = 500;
	m.ranges.sigma = {0.0, sigma_hi};
	Sweep s;
	for (int i = 0; i < n_runs; ++i) {
		sim::ScenarioConfig cfg = m.scenario;
		cfg.seed = master_seed + static_cast<std::uint64_t>(i);
		std::mt19937_64 rng(cfg.seed);
		const auto params = sim::sample_params(m.ranges, rng);
		const auto trace = sim::run_simulation(cfg, params);
		s.topo.push_back(features::summarize_run(trace, i));
		s.behavior.push_back({i, {params.sigma, params.eta, params.tau}, trace.collision_count, trace.deadlock_count});
	}
	return s;
}

double test_accuracy(std::span<const features::RunSummary> runs, features::EventKind kind,
                     std::vector<std::string> names) {
	const auto ds = features::build_dataset(runs, kind, features::SplitFractions{}, 10, std::move(names));
	const auto tr = ds.subset(features::Split::train);
	std::vector<std::vector<double>> x;
	for (const auto& s : tr) x.push_back(s.x);
	const auto model = svm::fit(x, calibrate::labels_of(tr), svm::Hyperparams{});
	const auto test = ds.subset(features::Split::test);
	const auto m = pipeline::classifier_metrics(model, test);
	return m.acc.value_or(0.0);
}

struct Ordering {
	double mean_event = 0, mean_rest = 0, z = 0;
	std::size_t n_event = 0, n_rest = 0;
};

// mean_entropy of runs with the event vs without it.
Ordering ordering(std::span<const features::RunSummary> runs, bool deadlock) {
	std::vector<double> a, b;
	for (const auto& r : runs) ((deadlock ? r.deadlock_count : r.collision_count) > 0 ? a : b).push_back(r.x[0]);
	auto stats = [](const std::vector<double>& v) {
		double m = 0, ss = 0;
		for (double e : v) m += e;
		m /= static_cast<double>(v.size());
		for (double e : v) ss += (e - m) * (e - m);
		return std::pair{m, ss / static_cast<double>(v.size() - 1) / static_cast<double>(v.size())};
	};
	Ordering o;
	o.n_event = a.size();
	o.n_rest = b.size();
	if (a.size() < 2 || b.size() < 2) return o;
	const auto [ma, va] = stats(a);
	const auto [mb, vb] = stats(b);
	o.mean_event = ma;
	o.mean_rest = mb;
	o.z = (ma - mb) / std::sqrt(va + vb);
	return o;
}

void end_to_end() {
	const auto t0 = Clock::now();
	const auto coll = run_sweep(0.1, 100'000, 2000);
	const auto dead = run_sweep(0.5, 200'000, 2000);
	const double topo = test_accuracy(coll.topo, features::EventKind::collision, features::topological_feature_names());
	const double behav = test_accuracy(coll.behavior, features::EventKind::collision, pipeline::behavior_feature_names());
	const auto note = pipeline::reversal_note(topo, behav);
	const bool a_ok = topo >= behav || note.has_value();
	const auto oc = ordering(coll.topo, false);
	const auto od = ordering(dead.topo, true);
	const bool b_ok = oc.z <= -3.0 && od.z >= 3.0;
	const double s = seconds_since(t0);
	verdict(10, "end-to-end plausibility", a_ok && b_ok && s < 1800.0,
	        fmt("(a) collision ACC topo %.1f vs behavior %.1f%s; (b) mean_entropy collision %.4f (n=%zu) vs %.4f "
	            "(n=%zu), z = %.2f; deadlock %.4f (n=%zu) vs %.4f (n=%zu), z = %.2f; %.0f s",
	            topo, behav, note ? " [reversal flagged]" : "", oc.mean_event, oc.n_event, oc.mean_rest, oc.n_rest,
	            oc.z, od.mean_event, od.n_event, od.mean_rest, od.n_rest, od.z, s));
}

// ---- 11: determinism ----------------------------------------------------------------------

std::string slurp(const fs::path& p) {
	std::ifstream is(p, std::ios::binary);
	std::ostringstream ss;
	ss << is.rdbuf();
	return ss.str();
}

void determinism() {
	const auto root = fs::temp_directory_path() / ("toposafe_accept_" + std::to_string(::getpid()));
	fs::remove_all(root);
	std::istringstream manifest(R"([experiment]
n_runs = 240
master_seed = 11
[scenario]
n_steps = 250
[sampling]
sigma = 0.0, 0.15
[calibration]
eps = 0.3
delta = 0.05
[anchors]
max_instances = 2
max_samples = 2000
)");
	auto m = pipeline::parse_manifest(manifest);
	std::ostringstream log;
	using Stage = int (*)(const pipeline::Manifest&, std::ostream&);
	const Stage stages[] = {pipeline::simulate, pipeline::featurize, pipeline::train, pipeline::calibrate_stage};
	int rc = 0;
	for (const char* dir : {"a", "b"}) {
		m.output_dir = root / dir;
		for (auto st : stages) rc |= st(m, log);
	}
	std::vector<std::string> files;
	for (std::string ev : {"collision", "deadlock"})
		for (std::string set : {"topo", "behavior"}) {
			files.push_back(ev + "/dataset_" + set + ".csv");
			files.push_back(ev + "/model_" + set + ".json");
			files.push_back(ev + "/region_" + set + "_ps.json");
			files.push_back(ev + "/region_" + set + "_cp.json");
		}
	int identical = 0;
	for (const auto& f : files)
		identical += fs::exists(root / "a" / f) && slurp(root / "a" / f) == slurp(root / "b" / f);
	fs::remove_all(root);
	verdict(11, "determinism", rc == 0 && identical == static_cast<int>(files.size()),
	        fmt("%d/%zu dataset/model/region files byte-identical across two full runs", identical, files.size()));
}

} // namespace

int main() {
	const std::vector<std::pair<int, std::function<void()>>> criteria{
		{1, entropy_example}, {2, entropy_extremes}, {3, barcode_oracle},  {4, scaling_rank},
		{5, ps_guarantee},    {6, conformal_coverage}, {7, csr_equality},  {8, rule_identities},
		{9, anchor_recovery}, {10, end_to_end},      {11, determinism}};
	for (const auto& [id, fn] : criteria) {
		try {
			fn();
		} catch (const std::exception& e) {
			verdict(id, "criterion", false, std::string("exception: ") + e.what());
		}
	}
	std::printf("%d of %zu criteria failed\n", failures, criteria.size());
	return failures == 0 ? 0 : 1;
}
