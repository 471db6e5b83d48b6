#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <random>

#include "toposafe/svm.hpp"

using namespace toposafe;
using namespace toposafe::svm;

namespace {

struct Toy {
	std::vector<std::vector<double>> x;
	std::vector<Label> y;
};

Toy two_clusters(int n_per_class, double gap, std::uint64_t seed) {
	std::mt19937_64 rng(seed);
	std::normal_distribution<double> nd(0.0, 0.3);
	Toy t;
	for (int i = 0; i < n_per_class; ++i) {
		t.x.push_back({gap + nd(rng), nd(rng)});
		t.y.push_back(Label::safe);
		t.x.push_back({-gap + nd(rng), nd(rng)});
		t.y.push_back(Label::unsafe);
	}
	return t;
}

Toy overlapping(int n, std::uint64_t seed) {
	std::mt19937_64 rng(seed);
	std::normal_distribution<double> nd(0.0, 1.0);
	std::bernoulli_distribution coin(0.35);
	Toy t;
	for (int i = 0; i < n; ++i) {
		const bool safe = !coin(rng);
		t.x.push_back({nd(rng) + (safe ? 0.8 : -0.8), nd(rng), 0.1 * nd(rng)});
		t.y.push_back(safe ? Label::safe : Label::unsafe);
	}
	return t;
}

} // namespace

TEST(SvmFit, SeparableClustersTrainPerfectly) {
	auto t = two_clusters(40, 2.0, 1);
	auto m = fit(t.x, t.y, Hyperparams{});
	EXPECT_TRUE(m.converged);
	for (std::size_t i = 0; i < t.x.size(); ++i) EXPECT_EQ(m.classify(t.x[i], 0.0), t.y[i]);
}

TEST(SvmFit, XorWithSmallKernelWidth) {
	Toy t;
	t.x = {{0, 0}, {1, 1}, {0, 1}, {1, 0}};
	t.y = {Label::safe, Label::safe, Label::unsafe, Label::unsafe};
	Hyperparams h;
	h.kernel_sigma = 0.3;
	h.reg_c = 10.0;
	auto m = fit(t.x, t.y, h);
	for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(m.classify(t.x[i], 0.0), t.y[i]) << i;
}

TEST(SvmFit, DuplicationInvariance) {
	// Per-sample boxes do not change under duplication, so the optimum is
	// duplication invariant when no box constraint is active.
	auto t = two_clusters(30, 1.2, 3);
	Hyperparams h;
	h.reg_c = 1e4;
	h.tolerance = 1e-10;
	auto a = fit(t.x, t.y, h);
	for (std::size_t i = 0; i < a.dual_coeffs.size(); ++i) ASSERT_LT(std::abs(a.dual_coeffs[i]), a.box[i]);
	Toy d = t;
	d.x.insert(d.x.end(), t.x.begin(), t.x.end());
	d.y.insert(d.y.end(), t.y.begin(), t.y.end());
	auto b = fit(d.x, d.y, h);
	std::mt19937_64 rng(4);
	std::normal_distribution<double> nd(0.0, 1.5);
	for (int i = 0; i < 200; ++i) {
		std::vector<double> q{nd(rng), nd(rng)};
		EXPECT_NEAR(a.decision_value(q), b.decision_value(q), 1e-6);
	}
}

TEST(SvmFit, DualFeasibility) {
	auto t = overlapping(300, 5);
	auto m = fit(t.x, t.y, Hyperparams{});
	double sum = 0.0;
	for (std::size_t i = 0; i < m.dual_coeffs.size(); ++i) {
		EXPECT_LE(std::abs(m.dual_coeffs[i]), m.box[i] * (1 + 1e-12));
		sum += m.dual_coeffs[i];
	}
	EXPECT_NEAR(sum, 0.0, 1e-8);
	for (double s : m.scaler.scale) EXPECT_GT(s, 0.0);
}

TEST(SvmFit, ClassBoxesFollowWeights) {
	auto t = overlapping(200, 6);
	const double n = 200;
	const double n_pos = static_cast<double>(std::count(t.y.begin(), t.y.end(), Label::safe));
	Hyperparams h;
	h.class_weight_pos = 0.7;
	auto m = fit(t.x, t.y, h);
	const double c_pos = h.reg_c * 0.7 * n / (2 * n_pos);
	const double c_neg = h.reg_c * 0.3 * n / (2 * (n - n_pos));
	for (std::size_t i = 0; i < m.box.size(); ++i) {
		const bool pos = m.dual_coeffs[i] < 0; // c_i = -alpha_i y_i
		EXPECT_DOUBLE_EQ(m.box[i], pos ? c_pos : c_neg);
	}
}

TEST(SvmFit, SingleClassIsDataError) {
	std::vector<std::vector<double>> x{{0.0}, {1.0}};
	std::vector<Label> y{Label::safe, Label::safe};
	EXPECT_THROW(fit(x, y, Hyperparams{}), DataError);
}

TEST(SvmFit, IterationCapClearsConvergedFlag) {
	auto t = overlapping(200, 7);
	Hyperparams h;
	h.max_iter = 3;
	auto m = fit(t.x, t.y, h);
	EXPECT_FALSE(m.converged);
	EXPECT_EQ(m.iterations, 3);
}

TEST(SvmFit, InvalidHyperparams) {
	Hyperparams h;
	h.kernel_sigma = 0.0;
	EXPECT_THROW(h.validate(), ConfigError);
	h = {};
	h.class_weight_pos = 1.5;
	EXPECT_THROW(h.validate(), ConfigError);
}

TEST(Adjustable, SignConventionAndRhoBar) {
	auto t = two_clusters(40, 2.0, 8);
	auto m = fit(t.x, t.y, Hyperparams{});
	std::vector<double> strongly_safe{3.0, 0.0};
	EXPECT_LT(m.decision_value(strongly_safe), 0.0);
	EXPECT_EQ(m.rho_bar(strongly_safe), -m.decision_value(strongly_safe));
	std::mt19937_64 rng(9);
	std::uniform_real_distribution<double> u(-3, 3);
	for (int i = 0; i < 300; ++i) {
		std::vector<double> q{u(rng), u(rng)};
		const double f = m.decision_value(q);
		EXPECT_EQ(m.classify(q, 0.0) == Label::safe, f < 0.0);
		// The boundary offset itself is outside the safe set.
		EXPECT_EQ(m.classify(q, m.rho_bar(q)), Label::unsafe);
		EXPECT_EQ(m.classify(q, 1e300), Label::unsafe);
		EXPECT_EQ(m.classify(q, -1e300), Label::safe);
	}
}

TEST(Adjustable, NestedSafeSetsAndMonotoneInRho) {
	auto t = overlapping(200, 10);
	auto m = fit(t.x, t.y, Hyperparams{});
	std::vector<double> rhos{-1.0, -0.5, -0.1, 0.0, 0.2, 0.7, 1.5};
	for (double gx = -3; gx <= 3; gx += 0.25)
		for (double gy = -3; gy <= 3; gy += 0.25) {
			std::vector<double> q{gx, gy, 0.0};
			const double f = m.decision_value(q);
			for (std::size_t k = 1; k < rhos.size(); ++k) {
				EXPECT_LT(f + rhos[k - 1], f + rhos[k]);
				if (m.classify(q, rhos[k]) == Label::safe) {
					EXPECT_EQ(m.classify(q, rhos[k - 1]), Label::safe);
				}
			}
		}
}

TEST(Adjustable, DecisionValueIsContinuous) {
	auto t = overlapping(150, 11);
	auto m = fit(t.x, t.y, Hyperparams{});
	std::vector<double> q{0.3, -0.2, 0.05};
	const double f0 = m.decision_value(q);
	double prev = 1e300;
	for (double h : {1e-2, 1e-4, 1e-6, 1e-8}) {
		std::vector<double> p{q[0] + h, q[1] - h, q[2] + h};
		const double diff = std::abs(m.decision_value(p) - f0);
		EXPECT_LE(diff, prev + 1e-15);
		prev = diff;
	}
	EXPECT_LT(prev, 1e-6);
}

TEST(Adjustable, JsonRoundTrip) {
	auto t = overlapping(80, 12);
	auto m = fit(t.x, t.y, Hyperparams{});
	auto back = model_from_json(nlohmann::json::parse(to_json(m).dump()));
	std::vector<double> q{0.1, 0.2, 0.0};
	EXPECT_EQ(back.decision_value(q), m.decision_value(q));
	EXPECT_EQ(back.converged, m.converged);
	EXPECT_THROW(model_from_json(nlohmann::json{{"bias", 1.0}}), DataError);
}

TEST(Adjustable, DimensionMismatchIsDataError) {
	auto t = two_clusters(10, 2.0, 13);
	auto m = fit(t.x, t.y, Hyperparams{});
	std::vector<double> q{1.0};
	EXPECT_THROW(m.decision_value(q), DataError);
}
