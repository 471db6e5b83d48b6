#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>
#include <random>
#include <sstream>

#include "toposafe/eval.hpp"

using namespace toposafe;
using namespace toposafe::eval;

namespace {

std::vector<Label> repeat(Label l, int n) { return std::vector<Label>(n, l); }

void append(std::vector<Label>& v, Label l, int n) { v.insert(v.end(), n, l); }

} // namespace

TEST(ConfusionMetrics, Perfect) {
	std::vector<Label> t{Label::safe, Label::unsafe, Label::safe};
	auto r = confusion_metrics(t, t);
	EXPECT_EQ(*r.acc, 100.0);
	EXPECT_EQ(*r.f1, 100.0);
	EXPECT_EQ(*r.fpr, 0.0);
}

TEST(ConfusionMetrics, AllPositiveOnBalanced) {
	std::vector<Label> truth{Label::safe, Label::safe, Label::unsafe, Label::unsafe};
	auto r = confusion_metrics(repeat(Label::safe, 4), truth);
	EXPECT_EQ(*r.tpr, 100.0);
	EXPECT_EQ(*r.tnr, 0.0);
	EXPECT_EQ(*r.acc, 50.0);
}

TEST(ConfusionMetrics, HandCounts) {
	std::vector<Label> pred, truth;
	append(pred, Label::safe, 84);
	append(truth, Label::safe, 84);
	append(pred, Label::unsafe, 16);
	append(truth, Label::safe, 16);
	append(pred, Label::safe, 12);
	append(truth, Label::unsafe, 12);
	append(pred, Label::unsafe, 88);
	append(truth, Label::unsafe, 88);
	auto r = confusion_metrics(pred, truth);
	EXPECT_DOUBLE_EQ(*r.tpr, 84.0);
	EXPECT_DOUBLE_EQ(*r.fpr, 12.0);
	EXPECT_DOUBLE_EQ(*r.acc, 86.0);
	EXPECT_DOUBLE_EQ(*r.f1, 100.0 * 168.0 / 196.0);
	EXPECT_EQ(r.n, 200);
}

TEST(ConfusionMetrics, IdentitiesAndPermutationInvariance) {
	std::mt19937_64 rng(1);
	std::bernoulli_distribution coin(0.6);
	for (int trial = 0; trial < 100; ++trial) {
		std::vector<Label> p(50), t(50);
		for (int i = 0; i < 50; ++i) {
			p[i] = coin(rng) ? Label::safe : Label::unsafe;
			t[i] = coin(rng) ? Label::safe : Label::unsafe;
		}
		auto r = confusion_metrics(p, t);
		if (r.tpr) {
			EXPECT_EQ(*r.tpr + *r.fnr, 100.0);
		}
		if (r.tnr) {
			EXPECT_EQ(*r.tnr + *r.fpr, 100.0);
		}
		std::vector<std::size_t> idx(50);
		std::iota(idx.begin(), idx.end(), 0);
		std::shuffle(idx.begin(), idx.end(), rng);
		std::vector<Label> p2, t2;
		for (auto i : idx) {
			p2.push_back(p[i]);
			t2.push_back(t[i]);
		}
		auto r2 = confusion_metrics(p2, t2);
		EXPECT_EQ(r.acc, r2.acc);
		EXPECT_EQ(r.f1, r2.f1);
		EXPECT_EQ(r.tpr, r2.tpr);
	}
}

TEST(ConfusionMetrics, AbsentClassFlagsUndefined) {
	auto r = confusion_metrics(repeat(Label::safe, 3), repeat(Label::safe, 3));
	EXPECT_FALSE(r.tnr.has_value());
	EXPECT_FALSE(r.fpr.has_value());
	EXPECT_TRUE(r.tpr.has_value());
	auto j = to_json(r);
	EXPECT_TRUE(j["tnr"].is_null());
	EXPECT_THROW(confusion_metrics(repeat(Label::safe, 2), repeat(Label::safe, 3)), DataError);
}

TEST(ClassSummary, SingleClassAndConstantFeature) {
	features::Dataset ds;
	ds.feature_names = {"a", "b"};
	for (int i = 0; i < 5; ++i) ds.samples.push_back({{1.5, double(i)}, Label::safe, features::Split::train, i});
	auto rows = class_distribution_summary(ds);
	ASSERT_EQ(rows.size(), 2u);
	EXPECT_EQ(rows[0].label, 1);
	EXPECT_EQ(rows[0].q1, 1.5);
	EXPECT_EQ(rows[0].median, 1.5);
	EXPECT_EQ(rows[0].q3, 1.5);
	EXPECT_EQ(rows[1].median, 2.0);
	features::Dataset empty;
	EXPECT_THROW(class_distribution_summary(empty), DataError);
}

TEST(ClassSummary, RecoversGeneratorMeans) {
	std::mt19937_64 rng(3);
	std::normal_distribution<double> a(2.6, 0.1), b(2.8, 0.1);
	features::Dataset ds;
	ds.feature_names = {"mean_entropy"};
	for (int i = 0; i < 2000; ++i) {
		const bool safe = i % 2 == 0;
		ds.samples.push_back({{safe ? b(rng) : a(rng)}, safe ? Label::safe : Label::unsafe, features::Split::train, i});
	}
	for (const auto& r : class_distribution_summary(ds)) {
		const double truth = r.label == 1 ? 2.8 : 2.6;
		EXPECT_LE(std::abs(r.mean - truth), 3.0 * r.std_error);
	}
}

TEST(TextTable, AlignsColumns) {
	TextTable t({"Features", "ACC"});
	t.add({"Topological", fmt1(85.04)});
	t.add({"Behavior", fmt1(std::nullopt)});
	std::ostringstream os;
	t.print(os);
	EXPECT_EQ(os.str(), "Features      ACC\n-----------------\nTopological  85.0\nBehavior        -\n");
}
