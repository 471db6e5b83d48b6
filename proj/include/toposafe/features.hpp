#pragma once

// Trace -> persistent-entropy series -> four summary statistics, plus
// labelling and stratified dataset assembly.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "toposafe/core.hpp"
#include "toposafe/sim.hpp"
#include "toposafe/tda.hpp"

namespace toposafe::features {

struct EntropySeries {
	std::vector<double> values;
};

inline double cloud_entropy(std::span<const Point2> cloud) {
	return tda::persistent_entropy(tda::zero_dim_barcode(cloud)).h;
}

inline EntropySeries entropy_series(std::span<const PointCloud> positions) {
	if (positions.empty()) throw DataError("entropy_series: trace has no steps");
	EntropySeries s;
	s.values.reserve(positions.size());
	for (std::size_t t = 0; t < positions.size(); ++t) {
		if (positions[t].size() < 2)
			throw DataError("entropy_series: point cloud at step " + std::to_string(t) + " has fewer than 2 points");
		s.values.push_back(cloud_entropy(positions[t]));
	}
	return s;
}

inline EntropySeries entropy_series(const sim::SimulationTrace& trace) { return entropy_series(trace.positions); }

// Linear interpolation between order statistics at rank p * (n - 1).
inline double quantile_sorted(std::span<const double> sorted, double p) {
	const double pos = p * static_cast<double>(sorted.size() - 1);
	const auto lo = static_cast<std::size_t>(std::floor(pos));
	const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
	const double frac = pos - static_cast<double>(lo);
	return sorted[lo] + (sorted[hi] - sorted[lo]) * frac;
}

// (mean, median, population std, IQR).
inline FeatureVector summarize(std::span<const double> series) {
	if (series.size() < 2) throw DataError("summarize: series needs at least 2 values");
	std::vector<double> sorted(series.begin(), series.end());
	std::sort(sorted.begin(), sorted.end());
	const double n = static_cast<double>(sorted.size());
	// Summing in sorted order keeps the result permutation invariant.
	const double mean = std::accumulate(sorted.begin(), sorted.end(), 0.0) / n;
	double ss = 0.0;
	for (double v : sorted) ss += (v - mean) * (v - mean);
	const double median = quantile_sorted(sorted, 0.5);
	const double iqr = quantile_sorted(sorted, 0.75) - quantile_sorted(sorted, 0.25);
	return {std::clamp(mean, sorted.front(), sorted.back()), median, std::sqrt(ss / n), std::max(iqr, 0.0)};
}

inline FeatureVector summarize(const EntropySeries& s) { return summarize(s.values); }

enum class EventKind { collision, deadlock, compliant };

inline std::string to_string(EventKind k) {
	switch (k) {
	case EventKind::collision: return "collision";
	case EventKind::deadlock: return "deadlock";
	case EventKind::compliant: return "compliant";
	}
	return "?";
}

inline EventKind event_kind_from_string(const std::string& s) {
	if (s == "collision") return EventKind::collision;
	if (s == "deadlock") return EventKind::deadlock;
	if (s == "compliant") return EventKind::compliant;
	throw ConfigError("unknown event kind '" + s + "' (collision|deadlock|compliant)");
}

inline Label label(int collision_count, int deadlock_count, EventKind kind) {
	switch (kind) {
	case EventKind::collision: return collision_count == 0 ? Label::safe : Label::unsafe;
	case EventKind::deadlock: return deadlock_count == 0 ? Label::safe : Label::unsafe;
	case EventKind::compliant:
		return (collision_count == 0 && deadlock_count == 0) ? Label::safe : Label::unsafe;
	}
	return Label::unsafe;
}

inline Label label(const sim::SimulationTrace& trace, EventKind kind) {
	return label(trace.collision_count, trace.deadlock_count, kind);
}

enum class Split { train, calibration, test };

inline std::string to_string(Split s) {
	switch (s) {
	case Split::train: return "train";
	case Split::calibration: return "calibration";
	case Split::test: return "test";
	}
	return "?";
}

inline Split split_from_string(const std::string& s) {
	if (s == "train") return Split::train;
	if (s == "calibration") return Split::calibration;
	if (s == "test") return Split::test;
	throw DataError("unknown split '" + s + "'");
}

struct SplitFractions {
	double train = 0.6;
	double calibration = 0.2;
	double test = 0.2;

	void validate() const {
		if (!(train > 0.0 && calibration > 0.0 && test > 0.0))
			throw ConfigError("split fractions must all be > 0");
		if (std::abs(train + calibration + test - 1.0) > 1e-9) throw ConfigError("split fractions must sum to 1");
	}
};

struct LabeledSample {
	std::vector<double> x;
	Label y = Label::safe;
	Split split = Split::train;
	int run_id = 0;
};

// Per-run record needed to build a dataset without keeping positions around.
struct RunSummary {
	int run_id = 0;
	std::vector<double> x;
	int collision_count = 0;
	int deadlock_count = 0;
};

struct Dataset {
	std::vector<std::string> feature_names;
	EventKind event_kind = EventKind::collision;
	std::vector<LabeledSample> samples;
	// Set when some split lacks one of the two classes.
	bool warning = false;
	std::vector<std::string> diagnostics;

	std::vector<LabeledSample> subset(Split s) const {
		std::vector<LabeledSample> out;
		for (const auto& smp : samples)
			if (smp.split == s) out.push_back(smp);
		return out;
	}
};

inline std::vector<std::string> topological_feature_names() {
	return {"mean_entropy", "median_entropy", "std_entropy", "iqr_entropy"};
}

inline RunSummary summarize_run(const sim::SimulationTrace& trace, int run_id) {
	const auto fv = summarize(entropy_series(trace));
	return {run_id, std::vector<double>(fv.begin(), fv.end()), trace.collision_count, trace.deadlock_count};
}

// Stratified split: samples are grouped by label, shuffled within the group,
// and dealt to the split with the largest quota deficit.
inline Dataset build_dataset(std::span<const RunSummary> runs, EventKind kind, const SplitFractions& fractions,
                             std::uint64_t seed, std::vector<std::string> feature_names = topological_feature_names()) {
	fractions.validate();
	Dataset ds;
	ds.feature_names = std::move(feature_names);
	ds.event_kind = kind;
	std::vector<std::size_t> safe_idx, unsafe_idx;
	for (std::size_t i = 0; i < runs.size(); ++i) {
		if (runs[i].x.size() != ds.feature_names.size()) throw DataError("feature dimension mismatch");
		const Label y = label(runs[i].collision_count, runs[i].deadlock_count, kind);
		ds.samples.push_back({runs[i].x, y, Split::train, runs[i].run_id});
		(y == Label::safe ? safe_idx : unsafe_idx).push_back(i);
	}
	std::mt19937_64 rng(seed);
	std::shuffle(safe_idx.begin(), safe_idx.end(), rng);
	std::shuffle(unsafe_idx.begin(), unsafe_idx.end(), rng);

	const std::array<double, 3> frac{fractions.train, fractions.calibration, fractions.test};
	const std::array<Split, 3> names{Split::train, Split::calibration, Split::test};
	std::array<double, 3> assigned{0, 0, 0};
	std::size_t dealt = 0;
	for (const auto* group : {&safe_idx, &unsafe_idx}) {
		for (std::size_t idx : *group) {
			++dealt;
			std::size_t best = 0;
			double best_deficit = -1e300;
			for (std::size_t s = 0; s < 3; ++s) {
				const double deficit = frac[s] * static_cast<double>(dealt) - assigned[s];
				if (deficit > best_deficit + 1e-12) {
					best_deficit = deficit;
					best = s;
				}
			}
			assigned[best] += 1.0;
			ds.samples[idx].split = names[best];
		}
	}

	for (Split s : names) {
		int pos = 0, neg = 0;
		for (const auto& smp : ds.samples)
			if (smp.split == s) (smp.y == Label::safe ? pos : neg)++;
		if (pos == 0 || neg == 0) {
			ds.warning = true;
			ds.diagnostics.push_back("split '" + to_string(s) + "' is missing a class (safe=" + std::to_string(pos) +
			                         ", unsafe=" + std::to_string(neg) + ")");
		}
	}
	return ds;
}

inline Dataset build_dataset(std::span<const sim::SimulationTrace> traces, EventKind kind,
                             const SplitFractions& fractions, std::uint64_t seed) {
	std::vector<RunSummary> runs;
	runs.reserve(traces.size());
	for (std::size_t i = 0; i < traces.size(); ++i) runs.push_back(summarize_run(traces[i], static_cast<int>(i)));
	return build_dataset(runs, kind, fractions, seed);
}

inline void write_dataset_csv(std::ostream& os, const Dataset& ds) {
	for (const auto& name : ds.feature_names) os << name << ',';
	os << "label,split,run_id\n";
	std::vector<const LabeledSample*> rows;
	for (const auto& s : ds.samples) rows.push_back(&s);
	std::stable_sort(rows.begin(), rows.end(), [](auto* a, auto* b) { return a->run_id < b->run_id; });
	for (const auto* s : rows) {
		for (double v : s->x) os << format_double(v) << ',';
		os << to_int(s->y) << ',' << to_string(s->split) << ',' << s->run_id << '\n';
	}
}

inline void write_dataset_csv(const std::filesystem::path& path, const Dataset& ds) {
	std::ofstream os(path);
	if (!os) throw DataError("cannot write " + path.string());
	write_dataset_csv(os, ds);
	if (!os) throw DataError("write failed for " + path.string());
}

inline Dataset read_dataset_csv(const std::filesystem::path& path, EventKind kind) {
	std::ifstream is(path);
	if (!is) throw DataError("cannot read dataset " + path.string());
	Dataset ds;
	ds.event_kind = kind;
	std::string line;
	if (!std::getline(is, line)) throw DataError("empty dataset " + path.string());
	auto header = split_csv_line(line);
	if (header.size() < 4 || header[header.size() - 3] != "label" || header[header.size() - 2] != "split" ||
	    header.back() != "run_id")
		throw DataError("bad dataset header in " + path.string());
	ds.feature_names.assign(header.begin(), header.end() - 3);
	const std::size_t d = ds.feature_names.size();
	while (std::getline(is, line)) {
		if (line.empty()) continue;
		auto cols = split_csv_line(line);
		if (cols.size() != d + 3) throw DataError("bad dataset row in " + path.string());
		LabeledSample s;
		for (std::size_t k = 0; k < d; ++k) s.x.push_back(parse_double(cols[k]));
		s.y = label_from_int(static_cast<int>(parse_int(cols[d])));
		s.split = split_from_string(cols[d + 1]);
		s.run_id = static_cast<int>(parse_int(cols[d + 2]));
		ds.samples.push_back(std::move(s));
	}
	return ds;
}

} // namespace toposafe::features
