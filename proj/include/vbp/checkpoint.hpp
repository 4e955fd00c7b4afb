// Parameter checkpoints.
//
// Text container, one item per line, numbers in shortest round-trip decimal
// so that save -> load is bit-exact:
//
//   VBPCKPT v1
//   spec layers=<n0,n1,...> taus=<t0,t1,...> input=<M> output=<M'> connectivity=<adjacent|full>
//   seed <u64>
//   lineage <free text>            (zero or more)
//   epochs_done <int>
//   adam_timestep <int>
//   init_latents <count>
//   block <section> <name> <rows> <cols>
//   <row values separated by spaces>   (rows lines)
//   ...
//   end
//
// <section> is one of param, adam_m, adam_v. Blocks appear in the order
// w_mu_c, w_mu_x, w_sigma_c, w_x_c, b_mu, b_sigma, b_x, init_latent[i]
// within each section, param first.
#pragma once

#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "vbp/common.hpp"
#include "vbp/net.hpp"
#include "vbp/train.hpp"

namespace vbp {

struct Checkpoint {
  NetworkSpec spec;
  TrainingState state;
  std::uint64_t seed = 0;
  std::vector<std::string> lineage;
};

namespace detail {

template <class T>
std::string join_csv(const std::vector<T>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) s += ',';
    if constexpr (std::is_floating_point_v<T>)
      s += format_double(v[i]);
    else
      s += std::to_string(v[i]);
  }
  return s;
}

template <class T>
bool split_csv(std::string_view s, std::vector<T>& out) {
  out.clear();
  while (!s.empty()) {
    auto comma = s.find(',');
    auto tok = s.substr(0, comma);
    T v{};
    bool ok;
    if constexpr (std::is_floating_point_v<T>)
      ok = parse_double(tok, v);
    else
      ok = parse_int(tok, v);
    if (!ok) return false;
    out.push_back(v);
    if (comma == std::string_view::npos) break;
    s.remove_prefix(comma + 1);
  }
  return !out.empty();
}

template <class Blocks>
void write_section(std::ostream& os, const char* section, const Blocks& b) {
  for_each_block(b, [&](const std::string& name, const auto& m) {
    os << "block " << section << ' ' << name << ' ' << m.rows() << ' ' << m.cols() << '\n';
    for (long r = 0; r < m.rows(); ++r) {
      for (long c = 0; c < m.cols(); ++c) {
        if (c) os << ' ';
        os << format_double(m(r, c));
      }
      os << '\n';
    }
  });
}

}  // namespace detail

inline void write_checkpoint(std::ostream& os, const Checkpoint& ck) {
  const auto& s = ck.spec;
  os << "VBPCKPT v1\n";
  os << "spec layers=" << detail::join_csv(s.layer_sizes) << " taus=" << detail::join_csv(s.time_constants)
     << " input=" << s.input_dim << " output=" << s.output_dim
     << " connectivity=" << (s.connectivity == Connectivity::full ? "full" : "adjacent") << '\n';
  os << "seed " << ck.seed << '\n';
  for (const auto& l : ck.lineage) os << "lineage " << l << '\n';
  os << "epochs_done " << ck.state.epochs_done << '\n';
  os << "adam_timestep " << ck.state.adam.timestep << '\n';
  os << "init_latents " << ck.state.params.init_latents.size() << '\n';
  detail::write_section(os, "param", ck.state.params);
  detail::write_section(os, "adam_m", ck.state.adam.m);
  detail::write_section(os, "adam_v", ck.state.adam.v);
  os << "end\n";
}

inline void save_checkpoint(const std::string& path, const Checkpoint& ck) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot open " + path + " for writing");
  write_checkpoint(os, ck);
  if (!os) throw std::runtime_error("write failed: " + path);
}

inline Checkpoint read_checkpoint(std::istream& is) {
  Checkpoint ck;
  std::string line;
  std::size_t lineno = 0;
  auto next = [&](const char* what) -> std::vector<std::string_view> {
    if (!std::getline(is, line)) throw LoadError(std::string("unexpected end of file, expected ") + what, lineno + 1);
    ++lineno;
    return detail::split_ws(line);
  };

  auto tok = next("header");
  if (tok.size() != 2 || tok[0] != "VBPCKPT") throw LoadError("not a checkpoint file", lineno);
  if (tok[1] != "v1") throw LoadError("unsupported checkpoint version '" + std::string(tok[1]) + "'", lineno);

  tok = next("spec");
  if (tok.size() != 6 || tok[0] != "spec") throw LoadError("expected spec line", lineno);
  NetworkSpec& s = ck.spec;
  std::string_view conn = detail::key_value(tok[5], "connectivity", lineno);
  if (!detail::split_csv(detail::key_value(tok[1], "layers", lineno), s.layer_sizes) ||
      !detail::split_csv(detail::key_value(tok[2], "taus", lineno), s.time_constants) ||
      !parse_int(detail::key_value(tok[3], "input", lineno), s.input_dim) ||
      !parse_int(detail::key_value(tok[4], "output", lineno), s.output_dim) || (conn != "adjacent" && conn != "full"))
    throw LoadError("malformed spec line", lineno);
  s.connectivity = conn == "full" ? Connectivity::full : Connectivity::adjacent;
  try {
    s.validate();
  } catch (const std::domain_error& e) {
    throw LoadError(e.what(), lineno);
  }

  tok = next("seed");
  if (tok.size() != 2 || tok[0] != "seed" || !parse_int(tok[1], ck.seed)) throw LoadError("expected seed line", lineno);
  for (;;) {
    tok = next("epochs_done");
    if (!tok.empty() && tok[0] == "lineage") {
      ck.lineage.push_back(line.size() > 8 ? line.substr(8) : std::string());
      continue;
    }
    break;
  }
  if (tok.size() != 2 || tok[0] != "epochs_done" || !parse_int(tok[1], ck.state.epochs_done))
    throw LoadError("expected epochs_done line", lineno);
  tok = next("adam_timestep");
  if (tok.size() != 2 || tok[0] != "adam_timestep" || !parse_int(tok[1], ck.state.adam.timestep))
    throw LoadError("expected adam_timestep line", lineno);
  std::size_t latents = 0;
  tok = next("init_latents");
  if (tok.size() != 2 || tok[0] != "init_latents" || !parse_int(tok[1], latents))
    throw LoadError("expected init_latents line", lineno);

  ck.state.params = Parameters(WeightBlocks::zeros(s, latents));
  ck.state.adam.m = WeightBlocks::zeros(s, latents);
  ck.state.adam.v = WeightBlocks::zeros(s, latents);

  auto read_section = [&](const char* section, WeightBlocks& b) {
    for_each_block(b, [&](const std::string& name, auto& m) {
      auto h = next("block header");
      long rows = 0, cols = 0;
      if (h.size() != 5 || h[0] != "block" || h[1] != section || h[2] != name || !parse_int(h[3], rows) ||
          !parse_int(h[4], cols))
        throw LoadError("expected 'block " + std::string(section) + ' ' + name + " <rows> <cols>'", lineno);
      if (rows != m.rows() || cols != m.cols())
        throw LoadError("block " + name + " has shape " + std::to_string(rows) + "x" + std::to_string(cols) +
                            ", spec requires " + std::to_string(m.rows()) + "x" + std::to_string(m.cols()),
                        lineno);
      for (long r = 0; r < rows; ++r) {
        auto vals = next("block row");
        if (static_cast<long>(vals.size()) != cols) throw LoadError("block " + name + ": wrong row width", lineno);
        for (long c = 0; c < cols; ++c)
          if (!parse_double(vals[static_cast<std::size_t>(c)], m(r, c)))
            throw LoadError("block " + name + ": bad number", lineno);
      }
    });
  };
  read_section("param", ck.state.params);
  read_section("adam_m", ck.state.adam.m);
  read_section("adam_v", ck.state.adam.v);
  tok = next("end");
  if (tok.size() != 1 || tok[0] != "end") throw LoadError("expected end marker", lineno);
  return ck;
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open " + path);
  try {
    return read_checkpoint(is);
  } catch (const LoadError& e) {
    throw e.prefixed(path);
  }
}

}  // namespace vbp
