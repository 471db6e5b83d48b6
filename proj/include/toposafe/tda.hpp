#pragma once

// 0-dimensional Vietoris-Rips persistence of planar point clouds and the
// persistent entropy of the resulting barcode.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>
#include <span>
#include <stdexcept>
#include <vector>

#include "toposafe/core.hpp"

namespace toposafe::tda {

struct Bar {
	double birth = 0.0;
	double death = 0.0;

	double length() const { return death - birth; }
	friend bool operator==(const Bar&, const Bar&) = default;
};

struct Barcode {
	std::vector<Bar> bars;
	int dim = 0;
	// Set when the cloud had fewer than two points.
	bool degenerate = false;
};

// How the single never-dying component is reported.
enum class EssentialClass {
	exclude,             // dropped; n - 1 bars
	cap_at_max_distance, // kept as a finite bar ending at the largest pairwise distance
};

class UnionFind {
public:
	explicit UnionFind(std::size_t n) : parent_(n), rank_(n, 0) {
		std::iota(parent_.begin(), parent_.end(), std::size_t{0});
	}

	std::size_t find(std::size_t i) {
		std::size_t root = i;
		while (parent_[root] != root) root = parent_[root];
		while (parent_[i] != root) {
			std::size_t next = parent_[i];
			parent_[i] = root;
			i = next;
		}
		return root;
	}

	// Returns false when a and b were already connected.
	bool unite(std::size_t a, std::size_t b) {
		a = find(a);
		b = find(b);
		if (a == b) return false;
		if (rank_[a] < rank_[b]) std::swap(a, b);
		parent_[b] = a;
		if (rank_[a] == rank_[b]) ++rank_[a];
		return true;
	}

private:
	std::vector<std::size_t> parent_;
	std::vector<unsigned> rank_;
};

namespace detail {

struct Edge {
	double weight;
	std::size_t i, j; // i < j
};

inline std::vector<Edge> all_edges(std::span<const Point2> cloud) {
	const std::size_t n = cloud.size();
	std::vector<Edge> edges;
	edges.reserve(n * (n - 1) / 2);
	for (std::size_t i = 0; i < n; ++i)
		for (std::size_t j = i + 1; j < n; ++j)
			edges.push_back({distance(cloud[i], cloud[j]), i, j});
	return edges;
}

inline double max_pairwise_distance(std::span<const Point2> cloud) {
	double m = 0.0;
	for (std::size_t i = 0; i < cloud.size(); ++i)
		for (std::size_t j = i + 1; j < cloud.size(); ++j)
			m = std::max(m, distance(cloud[i], cloud[j]));
	return m;
}

} // namespace detail

// Deaths of the 0-dim Rips filtration are the Euclidean MST edge weights.
// Kruskal over the complete graph, ties broken on (weight, i, j).
inline Barcode zero_dim_barcode(std::span<const Point2> cloud,
                                EssentialClass essential = EssentialClass::exclude) {
	Barcode code;
	const std::size_t n = cloud.size();
	if (n < 2) {
		code.degenerate = true;
		return code;
	}
	auto edges = detail::all_edges(cloud);
	std::sort(edges.begin(), edges.end(), [](const detail::Edge& a, const detail::Edge& b) {
		if (a.weight != b.weight) return a.weight < b.weight;
		if (a.i != b.i) return a.i < b.i;
		return a.j < b.j;
	});
	UnionFind uf(n);
	code.bars.reserve(n);
	for (const auto& e : edges) {
		if (uf.unite(e.i, e.j)) {
			code.bars.push_back({0.0, e.weight});
			if (code.bars.size() == n - 1) break;
		}
	}
	if (essential == EssentialClass::cap_at_max_distance)
		code.bars.push_back({0.0, detail::max_pairwise_distance(cloud)});
	return code;
}

// Test oracle: sweeps every edge of the Rips 1-skeleton in length order and
// tracks components with an explicit label array, relabelling on each merge.
// Independent of the union-find path above.
inline Barcode brute_force_zero_dim(std::span<const Point2> cloud) {
	constexpr std::size_t max_points = 64;
	const std::size_t n = cloud.size();
	if (n > max_points) throw std::invalid_argument("brute_force_zero_dim: oracle limited to 64 points");
	Barcode code;
	if (n < 2) {
		code.degenerate = true;
		return code;
	}
	std::vector<double> lengths;
	std::vector<std::pair<std::size_t, std::size_t>> pairs;
	for (std::size_t i = 0; i < n; ++i)
		for (std::size_t j = i + 1; j < n; ++j) {
			const double dx = cloud[i].x - cloud[j].x;
			const double dy = cloud[i].y - cloud[j].y;
			lengths.push_back(std::sqrt(dx * dx + dy * dy));
			pairs.emplace_back(i, j);
		}
	std::vector<std::size_t> order(lengths.size());
	std::iota(order.begin(), order.end(), std::size_t{0});
	std::stable_sort(order.begin(), order.end(),
	                 [&](std::size_t a, std::size_t b) { return lengths[a] < lengths[b]; });

	std::vector<std::size_t> component(n);
	std::iota(component.begin(), component.end(), std::size_t{0});
	for (std::size_t idx : order) {
		const auto [i, j] = pairs[idx];
		const std::size_t keep = component[i];
		const std::size_t drop = component[j];
		if (keep == drop) continue;
		for (auto& c : component)
			if (c == drop) c = keep;
		code.bars.push_back({0.0, lengths[idx]});
	}
	return code;
}

struct EntropyValue {
	double h = 0.0;
	// Set when every bar has zero length (total length 0).
	bool degenerate = false;
};

// H = -sum p_i ln p_i with p_i = l_i / L. Zero-length bars contribute 0.
inline EntropyValue persistent_entropy(std::span<const double> lengths) {
	if (lengths.empty()) throw std::invalid_argument("persistent_entropy: empty barcode");
	double total = 0.0;
	for (double l : lengths) {
		if (!(l >= 0.0)) throw std::invalid_argument("persistent_entropy: negative bar length");
		total += l;
	}
	if (total == 0.0) return {0.0, true};

	// Uniform positive lengths: closed form ln k, free of summation rounding.
	std::size_t positive = 0;
	double first_positive = 0.0;
	bool uniform = true;
	for (double l : lengths) {
		if (l == 0.0) continue;
		if (positive++ == 0) first_positive = l;
		else if (l != first_positive) uniform = false;
	}
	if (uniform) return {std::log(static_cast<double>(positive)), false};

	double h = 0.0;
	for (double l : lengths) {
		if (l == 0.0) continue;
		const double p = l / total;
		h -= p * std::log(p);
	}
	return {std::max(h, 0.0), false};
}

inline EntropyValue persistent_entropy(const Barcode& code) {
	std::vector<double> lengths;
	lengths.reserve(code.bars.size());
	for (const auto& b : code.bars) lengths.push_back(b.length());
	return persistent_entropy(lengths);
}

inline void write_barcode_csv(std::ostream& os, const Barcode& code) {
	os << "birth,death\n";
	for (const auto& b : code.bars) os << format_double(b.birth) << ',' << format_double(b.death) << '\n';
}

} // namespace toposafe::tda
