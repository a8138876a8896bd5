// Apache License, Version 2.0, refer to LICENSE.txt

#pragma once

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include "rtm/linkfn.hpp"
#include "rtm/matrix.hpp"

namespace rtm {

enum class ModelKind { Rtm, Lda, LdaRegression, Unigram };

// Topics, Dirichlet prior and link function of a fitted model. Topics are
// held as log beta; beta itself is always derived by exponentiation so a
// saved and reloaded model is bit-identical.
struct ModelParams {
  ModelKind model = ModelKind::Rtm;
  Matrix log_beta;  // K x V
  std::vector<double> alpha;
  LinkParams link;
  double smoothing = 0.01;

  std::size_t num_topics() const { return log_beta.rows(); }
  std::size_t vocab_size() const { return log_beta.cols(); }
  double alpha_total() const { return sum(alpha); }

  // Link terms take part in posterior inference only for the RTM.
  bool links_in_inference() const { return model == ModelKind::Rtm; }
  // Link scores exist for the RTM and for LDA + regression.
  bool scores_links() const {
    return model == ModelKind::Rtm || model == ModelKind::LdaRegression;
  }

  Matrix beta() const {
    Matrix b(log_beta.rows(), log_beta.cols());
    for (std::size_t i = 0; i < b.data().size(); ++i) b.data()[i] = std::exp(log_beta.data()[i]);
    return b;
  }

  bool operator==(const ModelParams&) const = default;
};

inline Matrix log_of(const Matrix& beta) {
  Matrix out(beta.rows(), beta.cols());
  for (std::size_t i = 0; i < out.data().size(); ++i) out.data()[i] = std::log(beta.data()[i]);
  return out;
}

inline std::vector<double> symmetric_alpha(std::size_t k, double total) {
  return std::vector<double>(k, total / static_cast<double>(k));
}

// ---------------------------------------------------------------------------
// Model file
//
//   rtm-model v1
//   K V kind alpha_total smoothing
//   nu
//   eta_1 ... eta_K
//   K lines of V log-beta values
//
// kind is a link function name for RTMs, or lda | lda_regression | unigram.

inline std::string model_kind_tag(const ModelParams& p) {
  switch (p.model) {
    case ModelKind::Rtm: return std::string(to_string(p.link.kind));
    case ModelKind::Lda: return "lda";
    case ModelKind::LdaRegression: return "lda_regression";
    case ModelKind::Unigram: return "unigram";
  }
  return "?";
}

inline void write_model(std::ostream& out, const ModelParams& p) {
  const std::size_t k = p.num_topics(), v = p.vocab_size();
  out << std::setprecision(17);
  out << "rtm-model v1\n";
  out << k << ' ' << v << ' ' << model_kind_tag(p) << ' ' << p.alpha_total() << ' '
      << p.smoothing << '\n';
  out << p.link.nu << '\n';
  for (std::size_t i = 0; i < k; ++i) out << (i ? " " : "") << p.link.eta[i];
  out << '\n';
  for (std::size_t t = 0; t < k; ++t) {
    for (std::size_t w = 0; w < v; ++w) out << (w ? " " : "") << p.log_beta(t, w);
    out << '\n';
  }
}

inline ModelParams read_model(std::istream& in, const std::string& source = "model") {
  auto fail = [&](std::size_t line, const std::string& what) -> Error {
    return Error(source + ":" + std::to_string(line) + ": " + what);
  };
  std::string line;
  if (!std::getline(in, line) || line != "rtm-model v1") throw fail(1, "bad header");
  std::size_t k = 0, v = 0;
  std::string kind;
  double alpha_total = 0.0;
  ModelParams p;
  if (!std::getline(in, line)) throw fail(2, "missing dimensions");
  {
    std::istringstream ss(line);
    if (!(ss >> k >> v >> kind >> alpha_total >> p.smoothing) || k == 0 || v == 0 ||
        !(alpha_total > 0.0))
      throw fail(2, "expected 'K V kind alpha_total smoothing'");
  }
  if (kind == "lda") {
    p.model = ModelKind::Lda;
    p.link.kind = LinkKind::Sigmoid;
  } else if (kind == "lda_regression") {
    p.model = ModelKind::LdaRegression;
    p.link.kind = LinkKind::Sigmoid;
  } else if (kind == "unigram") {
    p.model = ModelKind::Unigram;
    p.link.kind = LinkKind::Sigmoid;
  } else {
    p.model = ModelKind::Rtm;
    try {
      p.link.kind = parse_link_kind(kind);
    } catch (const Error& e) {
      throw fail(2, e.what());
    }
  }
  p.alpha = symmetric_alpha(k, alpha_total);

  auto read_row = [&](std::size_t lineno, std::size_t n) {
    if (!std::getline(in, line)) throw fail(lineno, "unexpected end of file");
    std::istringstream ss(line);
    std::vector<double> row;
    std::string tok;
    while (ss >> tok) {
      try {
        std::size_t used = 0;
        row.push_back(std::stod(tok, &used));
        if (used != tok.size()) throw std::invalid_argument(tok);
      } catch (const std::exception&) {
        throw fail(lineno, "bad number '" + tok + "'");
      }
    }
    if (row.size() != n)
      throw fail(lineno, "expected " + std::to_string(n) + " values, found " +
                             std::to_string(row.size()));
    return row;
  };
  p.link.nu = read_row(3, 1)[0];
  p.link.eta = read_row(4, k);
  p.log_beta = Matrix(k, v);
  for (std::size_t t = 0; t < k; ++t) {
    auto row = read_row(5 + t, v);
    double total = 0.0;
    for (std::size_t w = 0; w < v; ++w) {
      p.log_beta(t, w) = row[w];
      total += std::exp(row[w]);
    }
    if (std::abs(total - 1.0) > 1e-8)
      throw fail(5 + t, "topic " + std::to_string(t) + " does not sum to one");
  }
  if (p.model == ModelKind::Rtm && !is_admissible(p.link))
    throw fail(3, "inadmissible link parameters");
  return p;
}

// Writes to a sibling temporary file and renames it into place, so a failed
// run never leaves a partial model behind.
inline void save_model(const std::string& path, const ModelParams& p) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError(tmp, "cannot write file");
    write_model(out, p);
    out.flush();
    if (!out) {
      std::remove(tmp.c_str());
      throw IoError(tmp, "write failed");
    }
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::remove(tmp.c_str());
    throw IoError(path, "cannot rename model into place");
  }
}

inline ModelParams load_model(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError(path, "cannot open file");
  return read_model(in, path);
}

}  // namespace rtm
