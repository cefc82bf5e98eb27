#pragma once

// File formats: design / chain / plan documents (JSON), counts (CSV), spec
// strings for phi and h, and SHA-256 digests for report provenance.
//
// Design document:
//   { "k": 4, "m": 4, "t": 8, "u": 4,
//     "Q": m x k x t nested arrays, "C": m x k, "V": m x u, "d": [m] }
// C and d default to zero when absent.
//
// Counts: either rows "y1,...,yk,count" after a header naming the columns
// (absent patterns count 0), or a dense list of 2^k counts in pattern order
// separated by commas, whitespace or newlines.

#include <openssl/evp.h>

#include <json.hpp>

#include <array>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <memory>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include "lcm/divergence.hpp"
#include "lcm/inference.hpp"
#include "lcm/model.hpp"
#include "lcm/montecarlo.hpp"

namespace lcm {

using json = nlohmann::json;

// Malformed input files; the CLI maps these to their own exit status.
class ParseError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

namespace detail {

inline std::string read_text(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) {
    throw ParseError("cannot open " + path.string());
  }
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

inline json read_json(const std::filesystem::path& path) {
  try {
    return json::parse(read_text(path));
  } catch (const json::exception& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

inline bool parse_real(std::string_view s, double& out) {
  while (!s.empty() && s.front() == ' ') {
    s.remove_prefix(1);
  }
  while (!s.empty() && (s.back() == ' ' || s.back() == '\r')) {
    s.remove_suffix(1);
  }
  if (!s.empty() && s.front() == '+') {
    s.remove_prefix(1);
  }
  if (s.empty()) {
    return false;
  }
  const auto res = std::from_chars(s.data(), s.data() + s.size(), out);
  return res.ec == std::errc() && res.ptr == s.data() + s.size() && std::isfinite(out);
}

inline Matrix matrix_from_json(const json& j, Eigen::Index rows, Eigen::Index cols,
                               const char* what) {
  if (!j.is_array() || static_cast<Eigen::Index>(j.size()) != rows) {
    throw ParseError(std::string("design: ") + what + " must have " +
                     std::to_string(rows) + " rows");
  }
  Matrix M(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    const auto& row = j[static_cast<std::size_t>(r)];
    if (!row.is_array() || static_cast<Eigen::Index>(row.size()) != cols) {
      throw ParseError(std::string("design: ") + what + " row " + std::to_string(r + 1) +
                       " must have " + std::to_string(cols) + " entries");
    }
    for (Eigen::Index c = 0; c < cols; ++c) {
      M(r, c) = row[static_cast<std::size_t>(c)].get<double>();
    }
  }
  return M;
}

inline json matrix_to_json(const Matrix& M) {
  json out = json::array();
  for (Eigen::Index r = 0; r < M.rows(); ++r) {
    json row = json::array();
    for (Eigen::Index c = 0; c < M.cols(); ++c) {
      row.push_back(M(r, c));
    }
    out.push_back(row);
  }
  return out;
}

inline json vector_to_json(const Vector& v) {
  json out = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    out.push_back(v[i]);
  }
  return out;
}

inline Vector vector_from_json(const json& j, const char* what) {
  if (!j.is_array()) {
    throw ParseError(std::string(what) + " must be an array");
  }
  Vector v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) {
    v[static_cast<Eigen::Index>(i)] = j[i].get<double>();
  }
  return v;
}

inline std::vector<int> indices_from_json(const json& j, const char* what) {
  std::vector<int> out;
  if (j.is_null()) {
    return out;
  }
  if (!j.is_array()) {
    throw ParseError(std::string(what) + " must be an array");
  }
  for (const auto& v : j) {
    const int one_based = v.get<int>();
    if (one_based < 1) {
      throw ParseError(std::string(what) + ": indices are 1-based");
    }
    out.push_back(one_based - 1);
  }
  return out;
}

}  // namespace detail

inline ModelDesign design_from_json(const json& j) {
  try {
    ModelDesign d;
    d.k = j.at("k").get<int>();
    d.m = j.at("m").get<int>();
    const int t = j.at("t").get<int>();
    const int u = j.at("u").get<int>();
    if (d.k < 1 || d.m < 1 || t < 0 || u < 0) {
      throw ParseError("design: k, m must be positive and t, u nonnegative");
    }
    const json& q = j.at("Q");
    if (!q.is_array() || static_cast<int>(q.size()) != d.m) {
      throw ParseError("design: Q must be an m x k x t array");
    }
    d.Q.assign(static_cast<std::size_t>(t), Matrix::Zero(d.m, d.k));
    for (int jj = 0; jj < d.m; ++jj) {
      const auto& qj = q[static_cast<std::size_t>(jj)];
      if (!qj.is_array() || static_cast<int>(qj.size()) != d.k) {
        throw ParseError("design: Q must be an m x k x t array");
      }
      for (int i = 0; i < d.k; ++i) {
        const auto& qji = qj[static_cast<std::size_t>(i)];
        if (!qji.is_array() || static_cast<int>(qji.size()) != t) {
          throw ParseError("design: Q must be an m x k x t array");
        }
        for (int r = 0; r < t; ++r) {
          d.Q[static_cast<std::size_t>(r)](jj, i) = qji[static_cast<std::size_t>(r)].get<double>();
        }
      }
    }
    d.C = j.contains("C") ? detail::matrix_from_json(j["C"], d.m, d.k, "C")
                          : Matrix::Zero(d.m, d.k);
    d.V = u > 0 ? detail::matrix_from_json(j.at("V"), d.m, u, "V") : Matrix(d.m, 0);
    d.d = j.contains("d") ? detail::vector_from_json(j["d"], "design: d")
                          : Vector::Zero(d.m);
    try {
      d.validate();
    } catch (const std::invalid_argument& e) {
      throw ParseError(e.what());
    }
    return d;
  } catch (const json::exception& e) {
    throw ParseError(std::string("design: ") + e.what());
  }
}

inline json design_to_json(const ModelDesign& d) {
  json q = json::array();
  for (int j = 0; j < d.m; ++j) {
    json qj = json::array();
    for (int i = 0; i < d.k; ++i) {
      json qji = json::array();
      for (int r = 0; r < d.t(); ++r) {
        qji.push_back(d.Q[static_cast<std::size_t>(r)](j, i));
      }
      qj.push_back(qji);
    }
    q.push_back(qj);
  }
  return {{"k", d.k}, {"m", d.m}, {"t", d.t()}, {"u", d.u()}, {"Q", q},
          {"C", detail::matrix_to_json(d.C)}, {"V", detail::matrix_to_json(d.V)},
          {"d", detail::vector_to_json(d.d)}};
}

inline ModelDesign read_design(const std::filesystem::path& path) {
  try {
    return design_from_json(detail::read_json(path));
  } catch (const ParseError& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

inline ObservedCounts parse_counts(const std::string& text, int k) {
  std::istringstream is(text);
  std::string line;
  std::vector<std::string> lines;
  while (std::getline(is, line)) {
    if (!line.empty() && line.back() == '\r') {
      line.pop_back();
    }
    if (line.find_first_not_of(" \t") == std::string::npos || line[0] == '#') {
      continue;
    }
    lines.push_back(line);
  }
  if (lines.empty()) {
    throw ParseError("counts: no data");
  }
  const std::size_t cells = std::size_t{1} << k;
  auto split = [](const std::string& s) {
    std::vector<std::string> out;
    std::string cur;
    for (char ch : s) {
      if (ch == ',' || ch == ';' || ch == ' ' || ch == '\t') {
        if (!cur.empty()) {
          out.push_back(cur);
        }
        cur.clear();
      } else {
        cur.push_back(ch);
      }
    }
    if (!cur.empty()) {
      out.push_back(cur);
    }
    return out;
  };
  auto to_count = [](const std::string& s, std::size_t row) {
    std::int64_t v = 0;
    const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc() || res.ptr != s.data() + s.size() || v < 0) {
      throw ParseError("counts: bad count '" + s + "' on data row " + std::to_string(row));
    }
    return v;
  };

  std::vector<std::int64_t> n(cells, 0);
  const auto header = split(lines[0]);
  const bool per_pattern = !header.empty() && header.back() == "count";
  if (per_pattern) {
    if (static_cast<int>(header.size()) != k + 1) {
      throw ParseError("counts: header must name y1..y" + std::to_string(k) + " and count");
    }
    std::vector<bool> seen(cells, false);
    for (std::size_t r = 1; r < lines.size(); ++r) {
      const auto f = split(lines[r]);
      if (static_cast<int>(f.size()) != k + 1) {
        throw ParseError("counts: data row " + std::to_string(r) + " must have " +
                         std::to_string(k + 1) + " fields");
      }
      std::vector<int> y(static_cast<std::size_t>(k));
      for (int i = 0; i < k; ++i) {
        const auto& s = f[static_cast<std::size_t>(i)];
        if (s != "0" && s != "1") {
          throw ParseError("counts: pattern entries must be 0 or 1 on data row " +
                           std::to_string(r));
        }
        y[static_cast<std::size_t>(i)] = s == "1" ? 1 : 0;
      }
      const std::size_t c = pattern_index(y) - 1;
      if (seen[c]) {
        throw ParseError("counts: pattern repeated on data row " + std::to_string(r));
      }
      seen[c] = true;
      n[c] = to_count(f.back(), r);
    }
  } else {
    std::vector<std::int64_t> dense;
    for (std::size_t r = 0; r < lines.size(); ++r) {
      for (const auto& s : split(lines[r])) {
        dense.push_back(to_count(s, r + 1));
      }
    }
    if (dense.size() != cells) {
      throw ParseError("counts: dense vector has " + std::to_string(dense.size()) +
                       " entries, expected " + std::to_string(cells));
    }
    n = std::move(dense);
  }
  try {
    return ObservedCounts(std::move(n));
  } catch (const std::invalid_argument& e) {
    throw ParseError(e.what());
  }
}

inline ObservedCounts read_counts(const std::filesystem::path& path, int k) {
  try {
    return parse_counts(detail::read_text(path), k);
  } catch (const ParseError& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

// "power:a=<real>"
inline PhiSpec parse_phi(const std::string& text) {
  const std::string prefix = "power:a=";
  double a = 0.0;
  if (text.rfind(prefix, 0) != 0 || !detail::parse_real(text.substr(prefix.size()), a)) {
    throw std::invalid_argument("expected power:a=<real>, got '" + text + "'");
  }
  return PhiSpec::power(a);
}

// "identity" | "renyi:a=<real>" | "sharma-mittal:a=<real>,b=<real>" | "bhattacharyya"
inline HSpec parse_h(const std::string& text) {
  if (text == "identity") {
    return HSpec::identity();
  }
  if (text == "bhattacharyya") {
    return HSpec::bhattacharyya();
  }
  double a = 0.0;
  if (text.rfind("renyi:a=", 0) == 0 && detail::parse_real(text.substr(8), a)) {
    return HSpec::renyi(a);
  }
  const std::string sm = "sharma-mittal:a=";
  if (text.rfind(sm, 0) == 0) {
    const auto rest = text.substr(sm.size());
    const auto comma = rest.find(",b=");
    double b = 0.0;
    if (comma != std::string::npos && detail::parse_real(rest.substr(0, comma), a) &&
        detail::parse_real(rest.substr(comma + 3), b)) {
      return HSpec::sharma_mittal(a, b);
    }
  }
  throw std::invalid_argument(
      "expected identity | renyi:a=<real> | sharma-mittal:a=<real>,b=<real> | "
      "bhattacharyya, got '" + text + "'");
}

inline DofPolicy parse_dof_policy(const std::string& text) {
  if (text == "rank") {
    return DofPolicy::rank();
  }
  if (text == "nominal") {
    return DofPolicy::nominal();
  }
  double v = 0.0;
  if (detail::parse_real(text, v) && v == std::floor(v) && v >= 1.0 && v < 1e9) {
    return DofPolicy::fixed(static_cast<int>(v));
  }
  throw std::invalid_argument("expected rank | nominal | <positive integer>, got '" +
                              text + "'");
}

// Chain document: { "base": <design>, "note": "...",
//   "models": [ { "name": "M1", "fix_lambda": [..], "fix_eta": [..] }, ... ] }
// with 1-based indices of base coordinates fixed at zero in each model.
inline ModelChain read_chain(const std::filesystem::path& path) {
  const json j = detail::read_json(path);
  try {
    ModelChain chain;
    chain.base = design_from_json(j.at("base"));
    chain.note = j.value("note", "");
    for (const auto& mj : j.at("models")) {
      chain.models.push_back({mj.at("name").get<std::string>(),
                              detail::indices_from_json(mj.value("fix_lambda", json()),
                                                        "fix_lambda"),
                              detail::indices_from_json(mj.value("fix_eta", json()),
                                                        "fix_eta")});
    }
    chain.validate();
    return chain;
  } catch (const json::exception& e) {
    throw ParseError(path.string() + ": " + e.what());
  } catch (const std::invalid_argument& e) {
    throw ParseError(path.string() + ": " + e.what());
  } catch (const ParseError& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

inline SimulationPlan plan_from_json(const json& j, const std::filesystem::path& base_dir) {
  try {
    SimulationPlan plan;
    if (j.contains("design")) {
      plan.null_design = design_from_json(j["design"]);
    } else {
      plan.null_design = read_design(base_dir / j.at("design_file").get<std::string>());
    }
    plan.alt_Q = detail::matrix_from_json(j.at("alt_Q"), plan.null_design.m,
                                          plan.null_design.k, "alt_Q");
    plan.theta0 = {detail::vector_from_json(j.at("lambda0"), "lambda0"),
                   detail::vector_from_json(j.at("eta0"), "eta0")};
    plan.lambda8 = j.at("lambda8").get<std::vector<double>>();
    plan.sample_sizes = j.at("sample_sizes").get<std::vector<std::int64_t>>();
    plan.a_values = j.at("a_values").get<std::vector<double>>();
    plan.replications = j.value("replications", 1000);
    plan.alpha = j.value("alpha", 0.05);
    plan.seed = j.value("seed", std::uint64_t{0});
    plan.phi2 = parse_phi(j.value("phi2", std::string("power:a=0.6666666666666666")));
    plan.dof = parse_dof_policy(j.value("dof_policy", std::string("rank")));
    if (j.contains("fit")) {
      const auto& f = j["fit"];
      plan.fit.starts = f.value("starts", plan.fit.starts);
      plan.fit.init_scale = f.value("init_scale", plan.fit.init_scale);
      plan.fit.grad_tol = f.value("grad_tol", plan.fit.grad_tol);
      plan.fit.max_iters = f.value("max_iters", plan.fit.max_iters);
    }
    plan.validate();
    return plan;
  } catch (const json::exception& e) {
    throw ParseError(std::string("plan: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw ParseError(std::string("plan: ") + e.what());
  }
}

inline SimulationPlan read_plan(const std::filesystem::path& path) {
  try {
    return plan_from_json(detail::read_json(path), path.parent_path());
  } catch (const ParseError& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

inline std::string sha256_hex(const std::string& data) {
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(),
                                                              &EVP_MD_CTX_free);
  std::array<unsigned char, EVP_MAX_MD_SIZE> md{};
  unsigned int len = 0;
  if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr) != 1 ||
      EVP_DigestUpdate(ctx.get(), data.data(), data.size()) != 1 ||
      EVP_DigestFinal_ex(ctx.get(), md.data(), &len) != 1) {
    throw std::runtime_error("sha256: digest failed");
  }
  std::ostringstream os;
  for (unsigned int i = 0; i < len; ++i) {
    os << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(md[i]);
  }
  return os.str();
}

inline std::string sha256_file(const std::filesystem::path& path) {
  return sha256_hex(detail::read_text(path));
}

}  // namespace lcm
