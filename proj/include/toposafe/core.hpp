#pragma once

#include <array>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <system_error>
#include <vector>

namespace toposafe {

// Process exit codes used by the command line driver.
enum class ExitCode : int { ok = 0, config = 2, data = 3, numerical = 4 };

class Error : public std::runtime_error {
public:
	Error(ExitCode code, const std::string& what) : std::runtime_error(what), code_(code) {}
	ExitCode code() const noexcept { return code_; }

private:
	ExitCode code_;
};

struct ConfigError : Error {
	explicit ConfigError(const std::string& what) : Error(ExitCode::config, what) {}
};

struct DataError : Error {
	explicit DataError(const std::string& what) : Error(ExitCode::data, what) {}
};

struct NumericalError : Error {
	explicit NumericalError(const std::string& what) : Error(ExitCode::numerical, what) {}
};

// Binary safety label. +1 is the safe (positive) class.
enum class Label : int { unsafe = -1, safe = +1 };

inline int to_int(Label y) { return static_cast<int>(y); }

inline Label label_from_int(int v) {
	if (v == 1) return Label::safe;
	if (v == -1) return Label::unsafe;
	throw DataError("label must be -1 or +1, got " + std::to_string(v));
}

struct Point2 {
	double x = 0.0;
	double y = 0.0;

	friend bool operator==(const Point2&, const Point2&) = default;
};

inline double distance(const Point2& a, const Point2& b) {
	return std::hypot(a.x - b.x, a.y - b.y);
}

// Robot positions at one time step.
using PointCloud = std::vector<Point2>;

inline constexpr std::size_t feature_count = 4;
using FeatureVector = std::array<double, feature_count>;

inline constexpr std::array<const char*, feature_count> feature_names = {
	"meanEntropy", "medianEntropy", "stdEntropy", "iqrEntropy"};

// Shortest round-trip decimal text for a double; locale independent so
// emitted CSV files are byte-stable.
inline std::string format_double(double v) {
	std::array<char, 64> buf{};
	auto [end, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), v);
	if (ec != std::errc{}) throw std::runtime_error("format_double failed");
	return std::string(buf.data(), end);
}

inline double parse_double(const std::string& text) {
	double v = 0.0;
	const char* first = text.data();
	const char* last = text.data() + text.size();
	while (first != last && *first == ' ') ++first;
	auto [ptr, ec] = std::from_chars(first, last, v);
	if (ec != std::errc{} || ptr != last) throw DataError("not a number: '" + text + "'");
	return v;
}

inline long long parse_int(const std::string& text) {
	long long v = 0;
	auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
	if (ec != std::errc{} || ptr != text.data() + text.size())
		throw DataError("not an integer: '" + text + "'");
	return v;
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
	std::vector<std::string> out;
	std::string cur;
	for (char c : line) {
		if (c == ',') {
			out.push_back(cur);
			cur.clear();
		} else if (c != '\r') {
			cur.push_back(c);
		}
	}
	out.push_back(cur);
	return out;
}

} // namespace toposafe
