#pragma once

// Experiment pipeline: manifest parsing and the file-based stages
// simulate -> featurize -> train -> calibrate -> rules -> report.

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "toposafe/calibrate.hpp"
#include "toposafe/core.hpp"
#include "toposafe/eval.hpp"
#include "toposafe/features.hpp"
#include "toposafe/rules.hpp"
#include "toposafe/sim.hpp"
#include "toposafe/svm.hpp"

namespace toposafe::pipeline {

namespace fs = std::filesystem;
using nlohmann::json;

struct Manifest {
	int n_runs = 10'000;
	std::uint64_t master_seed = 0;
	fs::path output_dir = "out";
	std::vector<features::EventKind> events{features::EventKind::collision, features::EventKind::deadlock};

	sim::ScenarioConfig scenario{};
	sim::ParamRanges ranges{};
	features::SplitFractions split{};
	svm::Hyperparams svm{};

	double eps = 0.1;
	double delta = 1e-3;
	calibrate::RankRule rank_rule = calibrate::RankRule::exact_binomial;
	std::vector<std::string> methods{"ps", "cp"};

	rules::GlobalRuleOptions global{};
	rules::AnchorOptions anchors{};
	double d_max = 0.05;
	int max_instances = 10;

	void validate() const {
		if (n_runs < 1) throw ConfigError("experiment.n_runs must be >= 1");
		if (events.empty()) throw ConfigError("experiment.events must not be empty");
		scenario.validate();
		for (const auto* iv : {&ranges.v_opt, &ranges.tau_rot, &ranges.sigma, &ranges.eta, &ranges.tau})
			if (!(iv->lo <= iv->hi) || iv->lo < 0.0) throw ConfigError("sampling ranges must satisfy 0 <= lo <= hi");
		split.validate();
		svm.validate();
		if (!(eps > 0.0 && eps < 1.0)) throw ConfigError("calibration.eps must be in (0,1)");
		if (!(delta > 0.0 && delta < 1.0)) throw ConfigError("calibration.delta must be in (0,1)");
		if (methods.empty()) throw ConfigError("calibration.methods must not be empty");
		global.validate();
		anchors.validate();
		if (!(d_max >= 0.0)) throw ConfigError("anchors.d_max must be >= 0");
		if (max_instances < 1) throw ConfigError("anchors.max_instances must be >= 1");
	}
};

namespace detail {

inline std::string trim(const std::string& s) {
	const auto b = s.find_first_not_of(" \t\r");
	if (b == std::string::npos) return {};
	const auto e = s.find_last_not_of(" \t\r");
	return s.substr(b, e - b + 1);
}

inline std::vector<std::string> split_list(const std::string& s) {
	std::vector<std::string> out;
	std::stringstream ss(s);
	std::string item;
	while (std::getline(ss, item, ',')) {
		item = trim(item);
		if (!item.empty()) out.push_back(item);
	}
	return out;
}

inline double to_double(const std::string& key, const std::string& v) {
	try {
		return parse_double(trim(v));
	} catch (const Error&) {
		throw ConfigError(key + ": expected a number, got '" + v + "'");
	}
}

inline long long to_int(const std::string& key, const std::string& v) {
	try {
		return parse_int(trim(v));
	} catch (const Error&) {
		throw ConfigError(key + ": expected an integer, got '" + v + "'");
	}
}

inline sim::Interval to_interval(const std::string& key, const std::string& v) {
	const auto parts = split_list(v);
	if (parts.size() != 2) throw ConfigError(key + ": expected 'lo, hi'");
	return {to_double(key, parts[0]), to_double(key, parts[1])};
}

inline std::string method_name(const std::string& m) {
	if (m == "ps" || m == "cp") return m;
	throw ConfigError("unknown calibration method '" + m + "' (ps|cp)");
}

using Setter = std::function<void(Manifest&, const std::string&)>;

inline const std::map<std::string, Setter>& setters() {
	static const std::map<std::string, Setter> table = [] {
		std::map<std::string, Setter> t;
		auto num = [&t](const std::string& k, auto member) {
			t[k] = [k, member](Manifest& m, const std::string& v) { member(m) = to_double(k, v); };
		};
		auto integer = [&t](const std::string& k, auto member) {
			t[k] = [k, member](Manifest& m, const std::string& v) {
				member(m) = static_cast<std::remove_reference_t<decltype(member(m))>>(to_int(k, v));
			};
		};
		auto range = [&t](const std::string& k, auto member) {
			t[k] = [k, member](Manifest& m, const std::string& v) { member(m) = to_interval(k, v); };
		};

		integer("experiment.n_runs", [](Manifest& m) -> int& { return m.n_runs; });
		integer("experiment.master_seed", [](Manifest& m) -> std::uint64_t& { return m.master_seed; });
		t["experiment.output_dir"] = [](Manifest& m, const std::string& v) { m.output_dir = trim(v); };
		t["experiment.events"] = [](Manifest& m, const std::string& v) {
			m.events.clear();
			for (const auto& e : split_list(v)) {
				try {
					m.events.push_back(features::event_kind_from_string(e));
				} catch (const Error&) {
					throw ConfigError("experiment.events: unknown event '" + e + "'");
				}
			}
		};

		num("scenario.side", [](Manifest& m) -> double& { return m.scenario.side; });
		integer("scenario.n_robots", [](Manifest& m) -> int& { return m.scenario.n_robots; });
		num("scenario.robot_radius", [](Manifest& m) -> double& { return m.scenario.robot_radius; });
		integer("scenario.n_steps", [](Manifest& m) -> int& { return m.scenario.n_steps; });
		num("scenario.dt", [](Manifest& m) -> double& { return m.scenario.dt; });
		num("scenario.arrival_tolerance", [](Manifest& m) -> double& { return m.scenario.arrival_tolerance; });
		num("scenario.deadlock_window", [](Manifest& m) -> double& { return m.scenario.deadlock_window; });
		num("scenario.deadlock_speed_frac", [](Manifest& m) -> double& { return m.scenario.deadlock_speed_frac; });
		integer("scenario.candidate_headings", [](Manifest& m) -> int& { return m.scenario.tuning.candidate_headings; });
		num("scenario.horizon", [](Manifest& m) -> double& { return m.scenario.tuning.horizon; });

		range("sampling.v_opt", [](Manifest& m) -> sim::Interval& { return m.ranges.v_opt; });
		range("sampling.tau_rot", [](Manifest& m) -> sim::Interval& { return m.ranges.tau_rot; });
		range("sampling.sigma", [](Manifest& m) -> sim::Interval& { return m.ranges.sigma; });
		range("sampling.eta", [](Manifest& m) -> sim::Interval& { return m.ranges.eta; });
		range("sampling.tau", [](Manifest& m) -> sim::Interval& { return m.ranges.tau; });

		num("split.train", [](Manifest& m) -> double& { return m.split.train; });
		num("split.calibration", [](Manifest& m) -> double& { return m.split.calibration; });
		num("split.test", [](Manifest& m) -> double& { return m.split.test; });

		num("svm.kernel_sigma", [](Manifest& m) -> double& { return m.svm.kernel_sigma; });
		num("svm.reg_c", [](Manifest& m) -> double& { return m.svm.reg_c; });
		num("svm.class_weight_pos", [](Manifest& m) -> double& { return m.svm.class_weight_pos; });
		num("svm.tolerance", [](Manifest& m) -> double& { return m.svm.tolerance; });
		integer("svm.max_iter", [](Manifest& m) -> long long& { return m.svm.max_iter; });

		num("calibration.eps", [](Manifest& m) -> double& { return m.eps; });
		num("calibration.delta", [](Manifest& m) -> double& { return m.delta; });
		t["calibration.rank_rule"] = [](Manifest& m, const std::string& v) {
			const auto s = trim(v);
			if (s == "exact") m.rank_rule = calibrate::RankRule::exact_binomial;
			else if (s == "shortcut") m.rank_rule = calibrate::RankRule::half_eps_n;
			else throw ConfigError("calibration.rank_rule must be exact|shortcut");
		};
		t["calibration.methods"] = [](Manifest& m, const std::string& v) {
			m.methods.clear();
			for (const auto& s : split_list(v)) m.methods.push_back(method_name(s));
		};

		integer("rules.max_depth", [](Manifest& m) -> int& { return m.global.max_depth; });
		integer("rules.n_trees", [](Manifest& m) -> int& { return m.global.n_trees; });
		num("rules.max_samples", [](Manifest& m) -> double& { return m.global.max_samples; });
		num("rules.precision_min", [](Manifest& m) -> double& { return m.global.precision_min; });
		num("rules.recall_min", [](Manifest& m) -> double& { return m.global.recall_min; });

		num("anchors.lambda_prec", [](Manifest& m) -> double& { return m.anchors.lambda_prec; });
		num("anchors.delta", [](Manifest& m) -> double& { return m.anchors.delta; });
		integer("anchors.bins", [](Manifest& m) -> int& { return m.anchors.bins; });
		integer("anchors.batch", [](Manifest& m) -> long long& { return m.anchors.batch; });
		integer("anchors.max_samples", [](Manifest& m) -> long long& { return m.anchors.max_samples; });
		integer("anchors.max_depth", [](Manifest& m) -> int& { return m.anchors.max_depth; });
		num("anchors.d_max", [](Manifest& m) -> double& { return m.d_max; });
		integer("anchors.max_instances", [](Manifest& m) -> int& { return m.max_instances; });
		return t;
	}();
	return table;
}

inline std::string range_text(const sim::Interval& iv) { return format_double(iv.lo) + ", " + format_double(iv.hi); }

} // namespace detail

// INI-style manifest: [section] headers, `key = value` lines, ';' comments.
// Unknown sections or keys are configuration errors.
inline Manifest parse_manifest(std::istream& is) {
	boost::property_tree::ptree tree;
	try {
		boost::property_tree::ini_parser::read_ini(is, tree);
	} catch (const boost::property_tree::ini_parser_error& e) {
		throw ConfigError(std::string("manifest: ") + e.what());
	}
	Manifest m;
	const auto& table = detail::setters();
	for (const auto& [section, body] : tree) {
		if (body.empty() && !body.data().empty())
			throw ConfigError("manifest: key '" + section + "' outside of a section");
		for (const auto& [key, value] : body) {
			const std::string full = section + "." + key;
			auto it = table.find(full);
			if (it == table.end()) throw ConfigError("manifest: unknown key '" + full + "'");
			it->second(m, value.data());
		}
	}
	m.validate();
	return m;
}

inline Manifest load_manifest(const fs::path& path) {
	std::ifstream is(path);
	if (!is) throw ConfigError("cannot open manifest " + path.string());
	return parse_manifest(is);
}

// Every knob with its current value; parse_manifest(dump_manifest(m)) == m.
inline std::string dump_manifest(const Manifest& m) {
	std::ostringstream os;
	auto d = [](double v) { return format_double(v); };
	std::string events;
	for (auto e : m.events) events += (events.empty() ? "" : ", ") + features::to_string(e);
	std::string methods;
	for (const auto& s : m.methods) methods += (methods.empty() ? "" : ", ") + s;
	os << "[experiment]\n"
	   << "n_runs = " << m.n_runs << "\nmaster_seed = " << m.master_seed << "\noutput_dir = " << m.output_dir.string()
	   << "\nevents = " << events << "\n\n[scenario]\n"
	   << "side = " << d(m.scenario.side) << "\nn_robots = " << m.scenario.n_robots
	   << "\nrobot_radius = " << d(m.scenario.robot_radius) << "\nn_steps = " << m.scenario.n_steps
	   << "\ndt = " << d(m.scenario.dt) << "\narrival_tolerance = " << d(m.scenario.arrival_tolerance)
	   << "\ndeadlock_window = " << d(m.scenario.deadlock_window)
	   << "\ndeadlock_speed_frac = " << d(m.scenario.deadlock_speed_frac)
	   << "\ncandidate_headings = " << m.scenario.tuning.candidate_headings
	   << "\nhorizon = " << d(m.scenario.tuning.horizon) << "\n\n[sampling]\n"
	   << "v_opt = " << detail::range_text(m.ranges.v_opt) << "\ntau_rot = " << detail::range_text(m.ranges.tau_rot)
	   << "\nsigma = " << detail::range_text(m.ranges.sigma) << "\neta = " << detail::range_text(m.ranges.eta)
	   << "\ntau = " << detail::range_text(m.ranges.tau) << "\n\n[split]\n"
	   << "train = " << d(m.split.train) << "\ncalibration = " << d(m.split.calibration)
	   << "\ntest = " << d(m.split.test) << "\n\n[svm]\n"
	   << "kernel_sigma = " << d(m.svm.kernel_sigma) << "\nreg_c = " << d(m.svm.reg_c)
	   << "\nclass_weight_pos = " << d(m.svm.class_weight_pos) << "\ntolerance = " << d(m.svm.tolerance)
	   << "\nmax_iter = " << m.svm.max_iter << "\n\n[calibration]\n"
	   << "eps = " << d(m.eps) << "\ndelta = " << d(m.delta)
	   << "\nrank_rule = " << (m.rank_rule == calibrate::RankRule::exact_binomial ? "exact" : "shortcut")
	   << "\nmethods = " << methods << "\n\n[rules]\n"
	   << "max_depth = " << m.global.max_depth << "\nn_trees = " << m.global.n_trees
	   << "\nmax_samples = " << d(m.global.max_samples) << "\nprecision_min = " << d(m.global.precision_min)
	   << "\nrecall_min = " << d(m.global.recall_min) << "\n\n[anchors]\n"
	   << "lambda_prec = " << d(m.anchors.lambda_prec) << "\ndelta = " << d(m.anchors.delta)
	   << "\nbins = " << m.anchors.bins << "\nbatch = " << m.anchors.batch
	   << "\nmax_samples = " << m.anchors.max_samples << "\nmax_depth = " << m.anchors.max_depth
	   << "\nd_max = " << d(m.d_max) << "\nmax_instances = " << m.max_instances << '\n';
	return os.str();
}

struct Overrides {
	std::optional<fs::path> out;
	std::optional<double> eps;
	std::optional<std::string> method;
	std::optional<std::string> event;
	std::optional<std::uint64_t> seed;
};

inline void apply(Manifest& m, const Overrides& o) {
	if (o.out) m.output_dir = *o.out;
	if (o.eps) m.eps = *o.eps;
	if (o.method) m.methods = {detail::method_name(*o.method)};
	if (o.event) {
		try {
			m.events = {features::event_kind_from_string(*o.event)};
		} catch (const Error&) {
			throw ConfigError("--event must be collision|deadlock|compliant");
		}
	}
	if (o.seed) m.master_seed = *o.seed;
	m.validate();
}

// ---- Artifact layout --------------------------------------------------------

inline const std::vector<std::string>& feature_sets() {
	static const std::vector<std::string> sets{"topo", "behavior"};
	return sets;
}

inline std::vector<std::string> behavior_feature_names() { return {"sigma", "eta", "tau"}; }

struct Layout {
	fs::path root;

	fs::path traces() const { return root / "traces"; }
	fs::path trace_stem(int run) const {
		char buf[32];
		std::snprintf(buf, sizeof buf, "run_%06d", run);
		return traces() / buf;
	}
	fs::path index() const { return root / "index.csv"; }
	fs::path event_dir(features::EventKind k) const { return root / features::to_string(k); }
	fs::path dataset(features::EventKind k, const std::string& set) const {
		return event_dir(k) / ("dataset_" + set + ".csv");
	}
	fs::path model(features::EventKind k, const std::string& set) const {
		return event_dir(k) / ("model_" + set + ".json");
	}
	fs::path train_metrics(features::EventKind k, const std::string& set) const {
		return event_dir(k) / ("metrics_" + set + ".json");
	}
	fs::path region(features::EventKind k, const std::string& set, const std::string& method) const {
		return event_dir(k) / ("region_" + set + "_" + method + ".json");
	}
	fs::path rules(features::EventKind k, const std::string& set) const {
		return event_dir(k) / ("rules_" + set + ".json");
	}
	fs::path report_dir() const { return root / "report"; }
};

namespace detail {

inline void require(const fs::path& p, const std::string& stage) {
	if (!fs::exists(p)) throw DataError("missing " + p.string() + "; run `toposafe " + stage + "` first");
}

inline json read_json(const fs::path& p, const std::string& stage) {
	require(p, stage);
	std::ifstream is(p);
	try {
		return json::parse(is);
	} catch (const json::exception& e) {
		throw DataError("corrupt " + p.string() + ": " + e.what());
	}
}

inline void write_text(const fs::path& p, const std::string& text) {
	fs::create_directories(p.parent_path());
	std::ofstream os(p, std::ios::binary);
	if (!os) throw DataError("cannot write " + p.string());
	os << text;
	if (!os) throw DataError("write failed for " + p.string());
}

inline void write_json(const fs::path& p, const json& j) { write_text(p, j.dump(2) + "\n"); }

inline std::vector<std::vector<double>> rows_of(std::span<const features::LabeledSample> s) {
	std::vector<std::vector<double>> x;
	for (const auto& e : s) x.push_back(e.x);
	return x;
}

} // namespace detail

// ---- Stages -----------------------------------------------------------------

inline int simulate(const Manifest& m, std::ostream& log) {
	const Layout lay{m.output_dir};
	fs::create_directories(lay.traces());
	std::ostringstream index;
	index << "run_id,sigma,eta,tau,collisions,deadlocks\n";
	for (int i = 0; i < m.n_runs; ++i) {
		sim::ScenarioConfig cfg = m.scenario;
		cfg.seed = m.master_seed + static_cast<std::uint64_t>(i);
		std::mt19937_64 rng(cfg.seed);
		const auto params = sim::sample_params(m.ranges, rng);
		sim::SimulationTrace trace;
		try {
			trace = sim::run_simulation(cfg, params);
			sim::write_trace(lay.trace_stem(i), trace, i);
		} catch (const Error& e) {
			throw DataError("run " + std::to_string(i) + ": " + e.what());
		}
		index << i << ',' << format_double(params.sigma) << ',' << format_double(params.eta) << ','
		      << format_double(params.tau) << ',' << trace.collision_count << ',' << trace.deadlock_count << '\n';
		if ((i + 1) % 100 == 0) log << "simulated " << (i + 1) << "/" << m.n_runs << " runs\n";
	}
	detail::write_text(lay.index(), index.str());
	log << "wrote " << m.n_runs << " traces and " << lay.index().string() << '\n';
	return 0;
}

inline int featurize(const Manifest& m, std::ostream& log) {
	const Layout lay{m.output_dir};
	detail::require(lay.index(), "simulate");
	std::ifstream is(lay.index());
	std::string line;
	std::getline(is, line);
	std::vector<int> ids;
	while (std::getline(is, line))
		if (!line.empty()) ids.push_back(static_cast<int>(parse_int(split_csv_line(line).at(0))));
	if (ids.empty()) throw DataError("no traces listed in " + lay.index().string());

	std::vector<features::RunSummary> topo, behavior;
	std::size_t skipped = 0;
	for (int id : ids) {
		try {
			const auto trace = sim::read_trace(lay.trace_stem(id));
			topo.push_back(features::summarize_run(trace, id));
			behavior.push_back(
				{id, {trace.params.sigma, trace.params.eta, trace.params.tau}, trace.collision_count, trace.deadlock_count});
		} catch (const Error& e) {
			++skipped;
			log << "warning: skipping run " << id << ": " << e.what() << '\n';
		}
	}
	if (topo.empty()) throw DataError("every trace was unreadable");
	for (auto kind : m.events) {
		const auto dt = features::build_dataset(topo, kind, m.split, m.master_seed);
		const auto db = features::build_dataset(behavior, kind, m.split, m.master_seed, behavior_feature_names());
		fs::create_directories(lay.event_dir(kind));
		features::write_dataset_csv(lay.dataset(kind, "topo"), dt);
		features::write_dataset_csv(lay.dataset(kind, "behavior"), db);
		for (const auto& d : dt.diagnostics) log << "warning (" << features::to_string(kind) << "): " << d << '\n';
		log << features::to_string(kind) << ": " << dt.samples.size() << " rows\n";
	}
	if (skipped * 100 > ids.size()) {
		log << "error: skipped " << skipped << " of " << ids.size() << " traces (more than 1%)\n";
		return static_cast<int>(ExitCode::data);
	}
	return 0;
}

inline features::Dataset load_dataset(const Layout& lay, features::EventKind kind, const std::string& set) {
	detail::require(lay.dataset(kind, set), "featurize");
	return features::read_dataset_csv(lay.dataset(kind, set), kind);
}

inline svm::AdjustableModel load_model(const Layout& lay, features::EventKind kind, const std::string& set) {
	return svm::model_from_json(detail::read_json(lay.model(kind, set), "train"));
}

inline eval::MetricsReport classifier_metrics(const svm::AdjustableModel& model,
                                              std::span<const features::LabeledSample> data) {
	std::vector<Label> pred;
	for (const auto& s : data) pred.push_back(model.classify(s.x, 0.0));
	return eval::confusion_metrics(pred, calibrate::labels_of(data));
}

inline int train(const Manifest& m, std::ostream& log) {
	const Layout lay{m.output_dir};
	for (auto kind : m.events) {
		for (const auto& set : feature_sets()) {
			const auto ds = load_dataset(lay, kind, set);
			const auto tr = ds.subset(features::Split::train);
			const auto x = detail::rows_of(tr);
			const auto y = calibrate::labels_of(tr);
			const auto model = svm::fit(x, y, m.svm);
			if (!model.converged)
				throw NumericalError("svm did not converge within " + std::to_string(m.svm.max_iter) + " iterations (" +
				                     features::to_string(kind) + "/" + set + ")");
			detail::write_json(lay.model(kind, set), svm::to_json(model));
			const auto test = ds.subset(features::Split::test);
			const auto metrics = classifier_metrics(model, test);
			detail::write_json(lay.train_metrics(kind, set),
			                   {{"event", features::to_string(kind)},
			                    {"features", set},
			                    {"n_train", tr.size()},
			                    {"n_support", model.support_vectors.size()},
			                    {"iterations", model.iterations},
			                    {"test", eval::to_json(metrics)}});
			log << features::to_string(kind) << "/" << set << ": test ACC " << eval::fmt1(metrics.acc) << "%\n";
		}
	}
	return 0;
}

inline int calibrate_stage(const Manifest& m, std::ostream& log) {
	const Layout lay{m.output_dir};
	for (auto kind : m.events) {
		for (const auto& set : feature_sets()) {
			const auto ds = load_dataset(lay, kind, set);
			const auto model = load_model(lay, kind, set);
			const auto cal = ds.subset(features::Split::calibration);
			const auto test = ds.subset(features::Split::test);
			for (const auto& method : m.methods) {
				json out;
				if (method == "ps") {
					const auto reg = calibrate::probabilistic_scaling(model, cal, m.eps, m.delta, m.rank_rule);
					out = calibrate::to_json(reg);
					out["report"] = calibrate::to_json(calibrate::validate_region(
						[&](std::span<const double> x) { return reg.contains(model, x); }, test));
					log << features::to_string(kind) << "/" << set << " PS: rho_eps = " << format_double(reg.rho_eps)
					    << '\n';
				} else {
					const auto c = calibrate::conformal_calibrate(model, cal, m.eps);
					out = calibrate::to_json(c);
					out["report"] = calibrate::to_json(calibrate::validate_region(
						[&](std::span<const double> x) { return calibrate::csr_membership(c, model, x); }, test));
					if (c.discrepancy()) {
						out["report_shifted_safe_set"] = calibrate::to_json(calibrate::validate_region(
							[&](std::span<const double> x) {
								return calibrate::in_safe_set(model.rho_bar(x), -c.s_eps);
							},
							test));
						log << "warning: " << features::to_string(kind) << "/" << set
						    << " CP threshold s_eps > 0; the conformal region and the shifted safe set differ\n";
					}
					log << features::to_string(kind) << "/" << set << " CP: s_eps = " << format_double(c.s_eps) << '\n';
				}
				out["event"] = features::to_string(kind);
				out["features"] = set;
				detail::write_json(lay.region(kind, set, method), out);
			}
		}
	}
	return 0;
}

// Region membership and boundary margin for a stored region file.
struct RegionView {
	std::string method;
	std::function<bool(std::span<const double>)> contains;
	std::function<double(std::span<const double>)> margin;
};

inline std::optional<RegionView> load_region(const Layout& lay, features::EventKind kind, const std::string& set,
                                             const std::string& method, const svm::AdjustableModel& model) {
	const auto path = lay.region(kind, set, method);
	if (!fs::exists(path)) return std::nullopt;
	const auto j = detail::read_json(path, "calibrate");
	if (method == "ps") {
		const auto reg = calibrate::scaling_from_json(j);
		return RegionView{method, [reg, &model](std::span<const double> x) { return reg.contains(model, x); },
		                  [reg, &model](std::span<const double> x) { return model.decision_value(x) + reg.rho_eps; }};
	}
	const auto c = calibrate::conformal_from_json(j);
	return RegionView{method, [c, &model](std::span<const double> x) { return calibrate::csr_membership(c, model, x); },
	                  [c, &model](std::span<const double> x) { return model.rho_bar(x) + c.s_eps; }};
}

inline json report_json(const rules::RuleReport& r) { return rules::to_json(r); }

inline int rules_stage(const Manifest& m, std::ostream& log) {
	const Layout lay{m.output_dir};
	for (auto kind : m.events) {
		for (const auto& set : feature_sets()) {
			const auto ds = load_dataset(lay, kind, set);
			const auto model = load_model(lay, kind, set);
			const auto tr = ds.subset(features::Split::train);
			const auto test = ds.subset(features::Split::test);
			const auto xtr = detail::rows_of(tr);
			const auto xte = detail::rows_of(test);
			const auto yte = calibrate::labels_of(test);

			auto gopt = m.global;
			gopt.seed = m.master_seed;
			const auto global = rules::induce_global_rules(xtr, calibrate::labels_of(tr), gopt);
			json jg = json::array();
			for (const auto& sr : global.rules) {
				auto jr = rules::to_json(sr.rule, ds.feature_names);
				jr["oob_precision"] = sr.precision;
				jr["oob_recall"] = sr.recall;
				jr["test"] = report_json(rules::rule_metrics(sr.rule, xte, yte));
				jg.push_back(jr);
			}
			json out{{"event", features::to_string(kind)},
			         {"features", set},
			         {"global", {{"rules", jg},
			                     {"diagnostics", global.diagnostics},
			                     {"union_test", report_json(rules::premise_metrics(
			                                        [&](std::span<const double> v) { return global.fires(v); }, xte, yte, Label::safe))}}}};

			const rules::PerturbationModel pm(xtr, m.anchors.bins);
			json janchors = json::object();
			bool any_region = false;
			for (const std::string method : {"ps", "cp"}) {
				const auto region = load_region(lay, kind, set, method, model);
				if (!region) continue;
				any_region = true;
				auto sel = rules::boundary_instances(xte, region->contains, region->margin, m.d_max);
				std::stable_sort(sel.indices.begin(), sel.indices.end(), [&](std::size_t a, std::size_t b) {
					return std::abs(region->margin(xte[a])) < std::abs(region->margin(xte[b]));
				});
				if (sel.indices.size() > static_cast<std::size_t>(m.max_instances)) sel.indices.resize(m.max_instances);
				const rules::Predictor pred = [&](std::span<const double> z) {
					return region->contains(z) ? Label::safe : Label::unsafe;
				};
				std::vector<rules::Anchor> found;
				json ja = json::array();
				for (std::size_t i = 0; i < sel.indices.size(); ++i) {
					auto aopt = m.anchors;
					aopt.seed = m.master_seed + i;
					const auto a = rules::find_anchor(xte[sel.indices[i]], pred, pm, aopt);
					auto j = rules::to_json(a, ds.feature_names);
					j["run_id"] = test[sel.indices[i]].run_id;
					ja.push_back(j);
					found.push_back(a);
				}
				json jm{{"anchors", ja}, {"diagnostic", sel.diagnostic}};
				if (!found.empty()) {
					std::vector<Label> method_labels;
					for (const auto& x : xte) method_labels.push_back(pred(x));
					jm["union_vs_method"] = report_json(rules::evaluate_anchor_union(found, xte, method_labels));
					jm["union_vs_truth"] = report_json(rules::evaluate_anchor_union(found, xte, yte));
				}
				janchors[method] = jm;
				log << features::to_string(kind) << "/" << set << " " << method << ": " << found.size() << " anchors\n";
			}
			if (!any_region)
				throw DataError("missing region files for " + features::to_string(kind) + "/" + set +
				                "; run `toposafe calibrate` first");
			out["anchors"] = janchors;
			log << features::to_string(kind) << "/" << set << ": " << global.rules.size() << " global rules\n";
			detail::write_json(lay.rules(kind, set), out);
		}
	}
	return 0;
}

namespace detail {

inline std::optional<double> opt_of(const json& j) {
	if (j.is_null()) return std::nullopt;
	return j.get<double>();
}

inline std::vector<std::string> metric_cells(const json& j) {
	return {eval::fmt1(opt_of(j.at("acc"))), eval::fmt1(opt_of(j.at("f1"))),  eval::fmt1(opt_of(j.at("tpr"))),
	        eval::fmt1(opt_of(j.at("fpr"))), eval::fmt1(opt_of(j.at("fnr"))), eval::fmt1(opt_of(j.at("tnr")))};
}

inline std::string pct(const json& j) {
	if (j.is_null()) return "-";
	return eval::fmt1(100.0 * j.get<double>());
}

} // namespace detail

// Flag for reports when behavior parameters beat topological features.
inline std::optional<std::string> reversal_note(double topo_acc, double behavior_acc) {
	if (!(behavior_acc > topo_acc)) return std::nullopt;
	return "NOTE: behavior-parameter features outperform topological features on this task (ACC " +
	       eval::fmt1(behavior_acc) + " vs " + eval::fmt1(topo_acc) + ")";
}

inline int report(const Manifest& m, std::ostream& log) {
	const Layout lay{m.output_dir};
	for (auto kind : m.events) {
		const auto name = features::to_string(kind);
		std::ostringstream text;
		json out{{"event", name}};

		text << "== " << name << " task ==\n\nClassifier (test split, rho = 0)\n";
		eval::TextTable t1({"Features", "ACC", "F1", "TPR", "FPR", "FNR", "TNR", "#rules"});
		std::map<std::string, double> acc;
		for (const auto& set : feature_sets()) {
			const auto metrics = detail::read_json(lay.train_metrics(kind, set), "train").at("test");
			const auto rl = detail::read_json(lay.rules(kind, set), "rules");
			auto cells = detail::metric_cells(metrics);
			cells.insert(cells.begin(), set);
			cells.push_back(std::to_string(rl.at("global").at("rules").size()));
			t1.add(cells);
			acc[set] = metrics.at("acc").is_null() ? 0.0 : metrics.at("acc").get<double>();
			out["classifier"][set] = metrics;
			out["global_rules"][set] = rl.at("global").at("union_test");
		}
		t1.print(text);
		const auto note = reversal_note(acc["topo"], acc["behavior"]);
		out["topology_vs_behavior"] = {{"topo_acc", acc["topo"]}, {"behavior_acc", acc["behavior"]},
		                               {"reversal", note.has_value()}};
		if (note) text << *note << '\n';

		text << "\nSafety regions (test split)\n";
		eval::TextTable t2({"Features", "Method", "eps", "threshold", "ACC", "F1", "TPR", "FPR", "FNR", "TNR", "eps_hat"});
		std::string notes;
		for (const auto& set : feature_sets()) {
			for (const std::string method : {"ps", "cp"}) {
				if (!fs::exists(lay.region(kind, set, method))) continue;
				const auto j = detail::read_json(lay.region(kind, set, method), "calibrate");
				const double thr = method == "ps" ? j.at("rho_eps").get<double>() : j.at("s_eps").get<double>();
				auto cells = detail::metric_cells(j.at("report").at("metrics"));
				cells.insert(cells.begin(), {set, method == "ps" ? "PS" : "CP", eval::fmt_fixed(j.at("eps").get<double>(), 2),
				                             eval::fmt_fixed(thr, 3)});
				cells.push_back(detail::pct(j.at("report").at("eps_hat")));
				t2.add(cells);
				out["regions"][set][method] = j;
				if (method == "cp" && j.at("discrepancy").get<bool>())
					notes += "NOTE: " + set + " CP threshold is positive; conformal region differs from S(-s_eps)\n";
			}
		}
		t2.print(text);
		text << notes;

		text << "\nAnchor unions (test split; coverage / error in %)\n";
		eval::TextTable t3({"Features", "Method", "#anchors", "Cov(method)", "Err(method)", "Cov(truth)", "Err(truth)"});
		for (const auto& set : feature_sets()) {
			const auto rl = detail::read_json(lay.rules(kind, set), "rules");
			for (const auto& [method, body] : rl.at("anchors").items()) {
				const bool has = body.contains("union_vs_method");
				t3.add({set, method == "ps" ? "PS" : "CP", std::to_string(body.at("anchors").size()),
				        has ? detail::pct(body["union_vs_method"]["coverage"]) : "-",
				        has ? detail::pct(body["union_vs_method"]["error"]) : "-",
				        has ? detail::pct(body["union_vs_truth"]["coverage"]) : "-",
				        has ? detail::pct(body["union_vs_truth"]["error"]) : "-"});
				out["anchors"][set][method] = body;
			}
		}
		t3.print(text);

		const auto ds = load_dataset(lay, kind, "topo");
		const auto summary = eval::class_distribution_summary(ds);
		std::ostringstream csv;
		eval::write_class_summary_csv(csv, summary);

		detail::write_text(lay.report_dir() / (name + ".txt"), text.str());
		detail::write_json(lay.report_dir() / (name + ".json"), out);
		detail::write_text(lay.report_dir() / (name + "_class_summary.csv"), csv.str());
		log << text.str() << '\n';
	}
	return 0;
}

} // namespace toposafe::pipeline
