#pragma once

// Confusion-matrix metrics, per-class feature summaries and aligned text
// tables.

#include <algorithm>
#include <cstdio>
#include <map>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "toposafe/core.hpp"
#include "toposafe/features.hpp"

namespace toposafe::eval {

struct Confusion {
	long long tp = 0, fp = 0, fn = 0, tn = 0;

	long long n() const { return tp + fp + fn + tn; }
};

inline Confusion confusion(std::span<const Label> predicted, std::span<const Label> truth) {
	if (predicted.size() != truth.size()) throw DataError("confusion: label lists differ in length");
	Confusion c;
	for (std::size_t i = 0; i < truth.size(); ++i) {
		const bool p = predicted[i] == Label::safe;
		const bool t = truth[i] == Label::safe;
		if (p && t) ++c.tp;
		else if (p) ++c.fp;
		else if (t) ++c.fn;
		else ++c.tn;
	}
	return c;
}

// Percentages; a rate whose denominator is zero is left empty.
struct MetricsReport {
	std::optional<double> acc, f1, tpr, fpr, fnr, tnr;
	Confusion counts;
	long long n = 0;
};

inline std::optional<double> percent(long long num, long long den) {
	if (den == 0) return std::nullopt;
	return 100.0 * static_cast<double>(num) / static_cast<double>(den);
}

inline MetricsReport metrics_from_confusion(const Confusion& c) {
	MetricsReport r;
	r.counts = c;
	r.n = c.n();
	r.acc = percent(c.tp + c.tn, r.n);
	r.f1 = percent(2 * c.tp, 2 * c.tp + c.fp + c.fn);
	r.tpr = percent(c.tp, c.tp + c.fn);
	r.fnr = percent(c.fn, c.tp + c.fn);
	r.tnr = percent(c.tn, c.tn + c.fp);
	r.fpr = percent(c.fp, c.tn + c.fp);
	// Complements computed by subtraction so the identities are exact.
	if (r.tpr) r.fnr = 100.0 - *r.tpr;
	if (r.tnr) r.fpr = 100.0 - *r.tnr;
	return r;
}

inline MetricsReport confusion_metrics(std::span<const Label> predicted, std::span<const Label> truth) {
	return metrics_from_confusion(confusion(predicted, truth));
}

inline nlohmann::json opt_json(const std::optional<double>& v) {
	return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
}

inline nlohmann::json to_json(const MetricsReport& r) {
	return {{"acc", opt_json(r.acc)}, {"f1", opt_json(r.f1)},   {"tpr", opt_json(r.tpr)},
	        {"fpr", opt_json(r.fpr)}, {"fnr", opt_json(r.fnr)}, {"tnr", opt_json(r.tnr)},
	        {"n", r.n},               {"tp", r.counts.tp},      {"fp", r.counts.fp},
	        {"fn", r.counts.fn},      {"tn", r.counts.tn}};
}

struct ClassSummary {
	std::string feature;
	int label = 0;
	std::size_t n = 0;
	double mean = 0, q1 = 0, median = 0, q3 = 0;
	double std_error = 0; // of the mean
};

// Per-feature, per-class mean and quartiles; classes absent from the data
// produce no rows.
inline std::vector<ClassSummary> class_distribution_summary(const features::Dataset& ds) {
	if (ds.samples.empty()) throw DataError("class_distribution_summary: empty dataset");
	std::vector<ClassSummary> out;
	for (std::size_t k = 0; k < ds.feature_names.size(); ++k) {
		for (Label cls : {Label::unsafe, Label::safe}) {
			std::vector<double> v;
			for (const auto& s : ds.samples)
				if (s.y == cls) v.push_back(s.x[k]);
			if (v.empty()) continue;
			std::sort(v.begin(), v.end());
			ClassSummary c;
			c.feature = ds.feature_names[k];
			c.label = to_int(cls);
			c.n = v.size();
			double sum = 0.0;
			for (double e : v) sum += e;
			c.mean = sum / static_cast<double>(v.size());
			double ss = 0.0;
			for (double e : v) ss += (e - c.mean) * (e - c.mean);
			c.std_error = v.size() > 1 ? std::sqrt(ss / static_cast<double>(v.size() - 1) / static_cast<double>(v.size())) : 0.0;
			c.q1 = features::quantile_sorted(v, 0.25);
			c.median = features::quantile_sorted(v, 0.5);
			c.q3 = features::quantile_sorted(v, 0.75);
			out.push_back(c);
		}
	}
	return out;
}

inline void write_class_summary_csv(std::ostream& os, std::span<const ClassSummary> rows) {
	os << "feature,label,n,mean,q1,median,q3,std_error\n";
	for (const auto& r : rows)
		os << r.feature << ',' << r.label << ',' << r.n << ',' << format_double(r.mean) << ',' << format_double(r.q1)
		   << ',' << format_double(r.median) << ',' << format_double(r.q3) << ',' << format_double(r.std_error)
		   << '\n';
}

// Fixed one-decimal rendering for tables; "-" for undefined values.
inline std::string fmt1(const std::optional<double>& v) {
	if (!v) return "-";
	char buf[32];
	std::snprintf(buf, sizeof buf, "%.1f", *v);
	return buf;
}

inline std::string fmt_fixed(double v, int digits) {
	char buf[48];
	std::snprintf(buf, sizeof buf, "%.*f", digits, v);
	return buf;
}

class TextTable {
public:
	explicit TextTable(std::vector<std::string> header) : header_(std::move(header)) {}

	void add(std::vector<std::string> row) {
		row.resize(header_.size());
		rows_.push_back(std::move(row));
	}

	void print(std::ostream& os) const {
		std::vector<std::size_t> width(header_.size());
		for (std::size_t c = 0; c < header_.size(); ++c) {
			width[c] = header_[c].size();
			for (const auto& r : rows_) width[c] = std::max(width[c], r[c].size());
		}
		auto line = [&](const std::vector<std::string>& r) {
			for (std::size_t c = 0; c < r.size(); ++c) {
				if (c) os << "  ";
				// First column left-aligned, numbers right-aligned.
				if (c == 0) os << r[c] << std::string(width[c] - r[c].size(), ' ');
				else os << std::string(width[c] - r[c].size(), ' ') << r[c];
			}
			os << '\n';
		};
		line(header_);
		std::size_t total = 0;
		for (auto w : width) total += w;
		os << std::string(total + 2 * (width.size() - 1), '-') << '\n';
		for (const auto& r : rows_) line(r);
	}

private:
	std::vector<std::string> header_;
	std::vector<std::vector<std::string>> rows_;
};

inline std::vector<std::string> metrics_cells(const MetricsReport& r) {
	return {fmt1(r.acc), fmt1(r.f1), fmt1(r.tpr), fmt1(r.fpr), fmt1(r.fnr), fmt1(r.tnr)};
}

} // namespace toposafe::eval
