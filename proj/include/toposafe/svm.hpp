#pragma once

// Gaussian-kernel soft-margin SVM exposed as an adjustable classifier
// f(x, rho) = fhat(x) + rho, where fhat(x) < 0 means "safe" (+1).

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "toposafe/core.hpp"

namespace toposafe::svm {

struct Hyperparams {
	double kernel_sigma = 0.5;     // k(u,v) = exp(-|u-v|^2 / (2 sigma^2))
	double reg_c = 0.3;
	double class_weight_pos = 0.5; // 0.5 = balanced
	double tolerance = 1e-3;       // KKT gap
	long long max_iter = 10'000'000;

	void validate() const {
		if (!(kernel_sigma > 0.0)) throw ConfigError("svm.kernel_sigma must be > 0");
		if (!(reg_c > 0.0)) throw ConfigError("svm.reg_c must be > 0");
		if (!(class_weight_pos > 0.0 && class_weight_pos < 1.0))
			throw ConfigError("svm.class_weight_pos must be in (0,1)");
		if (!(tolerance > 0.0)) throw ConfigError("svm.tolerance must be > 0");
		if (max_iter < 1) throw ConfigError("svm.max_iter must be >= 1");
	}
};

struct Scaler {
	std::vector<double> shift;
	std::vector<double> scale;

	static Scaler fit(std::span<const std::vector<double>> rows) {
		Scaler s;
		const std::size_t d = rows.front().size();
		s.shift.assign(d, 0.0);
		s.scale.assign(d, 1.0);
		const double n = static_cast<double>(rows.size());
		for (std::size_t k = 0; k < d; ++k) {
			double mean = 0.0;
			for (const auto& r : rows) mean += r[k];
			mean /= n;
			double var = 0.0;
			for (const auto& r : rows) var += (r[k] - mean) * (r[k] - mean);
			var /= n;
			s.shift[k] = mean;
			s.scale[k] = var > 0.0 ? std::sqrt(var) : 1.0;
		}
		return s;
	}

	std::vector<double> apply(std::span<const double> x) const {
		if (x.size() != shift.size()) throw DataError("feature dimension mismatch");
		std::vector<double> z(x.size());
		for (std::size_t k = 0; k < x.size(); ++k) z[k] = (x[k] - shift[k]) / scale[k];
		return z;
	}
};

inline double gaussian_kernel(std::span<const double> u, std::span<const double> v, double sigma) {
	double d2 = 0.0;
	for (std::size_t k = 0; k < u.size(); ++k) d2 += (u[k] - v[k]) * (u[k] - v[k]);
	return std::exp(-d2 / (2.0 * sigma * sigma));
}

class AdjustableModel {
public:
	std::vector<std::vector<double>> support_vectors; // standardized
	std::vector<double> dual_coeffs;                  // signed: -alpha_i * y_i
	std::vector<double> box;                          // per support vector C_i
	double bias = 0.0;
	Scaler scaler;
	Hyperparams hyper;
	bool converged = false;
	long long iterations = 0;

	// fhat(x) = sum_i c_i k(sv_i, x~) - b on the standardized input.
	double decision_value(std::span<const double> x) const {
		const auto z = scaler.apply(x);
		double s = 0.0;
		for (std::size_t i = 0; i < support_vectors.size(); ++i)
			s += dual_coeffs[i] * gaussian_kernel(support_vectors[i], z, hyper.kernel_sigma);
		return s - bias;
	}

	// Offset that puts x on the boundary: f(x, rho_bar) = 0.
	double rho_bar(std::span<const double> x) const { return -decision_value(x); }

	Label classify(std::span<const double> x, double rho) const {
		return decision_value(x) + rho < 0.0 ? Label::safe : Label::unsafe;
	}

	std::size_t dim() const { return scaler.shift.size(); }
};

namespace detail {

// Kernel rows, precomputed when the full matrix is small enough.
class KernelMatrix {
public:
	KernelMatrix(const std::vector<std::vector<double>>& x, double sigma) : x_(x), sigma_(sigma), n_(x.size()) {
		if (n_ <= full_limit) {
			full_.resize(n_ * n_);
			for (std::size_t i = 0; i < n_; ++i)
				for (std::size_t j = i; j < n_; ++j)
					full_[i * n_ + j] = full_[j * n_ + i] = gaussian_kernel(x_[i], x_[j], sigma_);
		}
	}

	std::span<const double> row(std::size_t i, std::vector<double>& scratch) const {
		if (!full_.empty()) return {full_.data() + i * n_, n_};
		scratch.resize(n_);
		for (std::size_t j = 0; j < n_; ++j) scratch[j] = gaussian_kernel(x_[i], x_[j], sigma_);
		return scratch;
	}

private:
	static constexpr std::size_t full_limit = 4000;
	const std::vector<std::vector<double>>& x_;
	double sigma_;
	std::size_t n_;
	std::vector<double> full_;
};

} // namespace detail

// Weighted soft-margin dual solved by pairwise coordinate ascent with
// maximal-violating-pair selection. Per-class boxes:
//   C+ = reg_c * w * n / (2 n+),  C- = reg_c * (1 - w) * n / (2 n-).
inline AdjustableModel fit(std::span<const std::vector<double>> x_raw, std::span<const Label> labels,
                           const Hyperparams& hp) {
	hp.validate();
	const std::size_t n = x_raw.size();
	if (n == 0 || labels.size() != n) throw DataError("svm fit: empty or mismatched training data");
	std::size_t n_pos = 0;
	for (Label l : labels) n_pos += (l == Label::safe);
	const std::size_t n_neg = n - n_pos;
	if (n_pos == 0 || n_neg == 0) throw DataError("svm fit: training split must contain both classes");

	AdjustableModel model;
	model.hyper = hp;
	model.scaler = Scaler::fit(x_raw);
	std::vector<std::vector<double>> x;
	x.reserve(n);
	for (const auto& r : x_raw) x.push_back(model.scaler.apply(r));

	const double dn = static_cast<double>(n);
	const double c_pos = hp.reg_c * hp.class_weight_pos * dn / (2.0 * static_cast<double>(n_pos));
	const double c_neg = hp.reg_c * (1.0 - hp.class_weight_pos) * dn / (2.0 * static_cast<double>(n_neg));

	std::vector<double> y(n), cap(n), alpha(n, 0.0), grad(n, -1.0);
	for (std::size_t t = 0; t < n; ++t) {
		y[t] = static_cast<double>(to_int(labels[t]));
		cap[t] = labels[t] == Label::safe ? c_pos : c_neg;
	}

	const detail::KernelMatrix kernel(x, hp.kernel_sigma);
	std::vector<double> scratch_i, scratch_j;
	auto is_upper = [&](std::size_t t) { return alpha[t] >= cap[t]; };
	auto is_lower = [&](std::size_t t) { return alpha[t] <= 0.0; };
	auto in_up = [&](std::size_t t) { return y[t] > 0 ? !is_upper(t) : !is_lower(t); };
	auto in_low = [&](std::size_t t) { return y[t] > 0 ? !is_lower(t) : !is_upper(t); };

	constexpr double tau = 1e-12;
	long long iter = 0;
	bool converged = false;
	for (; iter < hp.max_iter; ++iter) {
		double g_max = -std::numeric_limits<double>::infinity();
		double g_min = std::numeric_limits<double>::infinity();
		std::size_t i = n, j = n;
		for (std::size_t t = 0; t < n; ++t) {
			const double v = -y[t] * grad[t];
			if (in_up(t) && v > g_max) {
				g_max = v;
				i = t;
			}
			if (in_low(t) && v < g_min) {
				g_min = v;
				j = t;
			}
		}
		if (i == n || j == n || g_max - g_min < hp.tolerance) {
			converged = true;
			break;
		}

		const auto ki = kernel.row(i, scratch_i);
		const auto kj = kernel.row(j, scratch_j);
		const double old_ai = alpha[i];
		const double old_aj = alpha[j];
		const double ci = cap[i];
		const double cj = cap[j];
		double quad = ki[i] + kj[j] - 2.0 * ki[j];
		if (quad <= 0.0) quad = tau;

		if (y[i] != y[j]) {
			const double delta = (-grad[i] - grad[j]) / quad;
			const double diff = alpha[i] - alpha[j];
			alpha[i] += delta;
			alpha[j] += delta;
			if (diff > 0) {
				if (alpha[j] < 0) {
					alpha[j] = 0;
					alpha[i] = diff;
				}
			} else {
				if (alpha[i] < 0) {
					alpha[i] = 0;
					alpha[j] = -diff;
				}
			}
			if (diff > ci - cj) {
				if (alpha[i] > ci) {
					alpha[i] = ci;
					alpha[j] = ci - diff;
				}
			} else {
				if (alpha[j] > cj) {
					alpha[j] = cj;
					alpha[i] = cj + diff;
				}
			}
		} else {
			const double delta = (grad[i] - grad[j]) / quad;
			const double sum = alpha[i] + alpha[j];
			alpha[i] -= delta;
			alpha[j] += delta;
			if (sum > ci) {
				if (alpha[i] > ci) {
					alpha[i] = ci;
					alpha[j] = sum - ci;
				}
			} else {
				if (alpha[j] < 0) {
					alpha[j] = 0;
					alpha[i] = sum;
				}
			}
			if (sum > cj) {
				if (alpha[j] > cj) {
					alpha[j] = cj;
					alpha[i] = sum - cj;
				}
			} else {
				if (alpha[i] < 0) {
					alpha[i] = 0;
					alpha[j] = sum;
				}
			}
		}

		const double dai = alpha[i] - old_ai;
		const double daj = alpha[j] - old_aj;
		for (std::size_t t = 0; t < n; ++t)
			grad[t] += y[t] * (y[i] * ki[t] * dai + y[j] * kj[t] * daj);
	}

	// Offset from free vectors; midpoint of the feasible interval otherwise.
	double ub = std::numeric_limits<double>::infinity();
	double lb = -std::numeric_limits<double>::infinity();
	double sum_free = 0.0;
	std::size_t n_free = 0;
	for (std::size_t t = 0; t < n; ++t) {
		const double yg = y[t] * grad[t];
		if (is_upper(t)) {
			if (y[t] < 0) ub = std::min(ub, yg);
			else lb = std::max(lb, yg);
		} else if (is_lower(t)) {
			if (y[t] > 0) ub = std::min(ub, yg);
			else lb = std::max(lb, yg);
		} else {
			++n_free;
			sum_free += yg;
		}
	}
	const double rho = n_free > 0 ? sum_free / static_cast<double>(n_free) : (ub + lb) / 2.0;

	// Standard form g(x) = sum alpha_i y_i k - rho predicts +1 for g > 0;
	// fhat = -g, so c_i = -alpha_i y_i and b = -rho.
	for (std::size_t t = 0; t < n; ++t) {
		if (alpha[t] <= 0.0) continue;
		model.support_vectors.push_back(x[t]);
		model.dual_coeffs.push_back(-alpha[t] * y[t]);
		model.box.push_back(cap[t]);
	}
	model.bias = -rho;
	model.converged = converged;
	model.iterations = iter;
	return model;
}

inline nlohmann::json to_json(const Hyperparams& h) {
	return {{"kernel_sigma", h.kernel_sigma},
	        {"reg_c", h.reg_c},
	        {"class_weight_pos", h.class_weight_pos},
	        {"tolerance", h.tolerance},
	        {"max_iter", h.max_iter}};
}

inline Hyperparams hyperparams_from_json(const nlohmann::json& j) {
	Hyperparams h;
	h.kernel_sigma = j.at("kernel_sigma").get<double>();
	h.reg_c = j.at("reg_c").get<double>();
	h.class_weight_pos = j.at("class_weight_pos").get<double>();
	h.tolerance = j.at("tolerance").get<double>();
	h.max_iter = j.at("max_iter").get<long long>();
	return h;
}

inline nlohmann::json to_json(const AdjustableModel& m) {
	return {{"support_vectors", m.support_vectors},
	        {"dual_coeffs", m.dual_coeffs},
	        {"box", m.box},
	        {"bias", m.bias},
	        {"scaler", {{"shift", m.scaler.shift}, {"scale", m.scaler.scale}}},
	        {"hyperparams", to_json(m.hyper)},
	        {"converged", m.converged},
	        {"iterations", m.iterations}};
}

inline AdjustableModel model_from_json(const nlohmann::json& j) {
	AdjustableModel m;
	try {
		m.support_vectors = j.at("support_vectors").get<std::vector<std::vector<double>>>();
		m.dual_coeffs = j.at("dual_coeffs").get<std::vector<double>>();
		m.box = j.at("box").get<std::vector<double>>();
		m.bias = j.at("bias").get<double>();
		m.scaler.shift = j.at("scaler").at("shift").get<std::vector<double>>();
		m.scaler.scale = j.at("scaler").at("scale").get<std::vector<double>>();
		m.hyper = hyperparams_from_json(j.at("hyperparams"));
		m.converged = j.at("converged").get<bool>();
		m.iterations = j.at("iterations").get<long long>();
	} catch (const nlohmann::json::exception& e) {
		throw DataError(std::string("corrupt model json: ") + e.what());
	}
	if (m.dual_coeffs.size() != m.support_vectors.size()) throw DataError("corrupt model json: size mismatch");
	return m;
}

} // namespace toposafe::svm
