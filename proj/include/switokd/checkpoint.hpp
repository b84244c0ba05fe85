#pragma once

// Text checkpoint format, version 1:
//
//   switokd-checkpoint 1
//   layers <L>
//   dense <relu|identity> <in> <out>
//   conv2d <relu|identity> <channels> <height> <width> <out_channels> <kernel> <stride>
//   ...                                    (one line per layer)
//   weight <l> <rows> <cols>
//   <rows lines of cols values>
//   bias <l> <n>
//   <one line of n values>
//
// Values use the shortest round-trip decimal form, so save/load is exact.

#include <charconv>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "switokd/config.hpp"
#include "switokd/error.hpp"
#include "switokd/nn.hpp"

namespace switokd {

inline constexpr int kCheckpointVersion = 1;

inline void save_checkpoint(std::ostream& out, const Network& net) {
  out << "switokd-checkpoint " << kCheckpointVersion << '\n';
  out << "layers " << net.layer_count() << '\n';
  for (const auto& s : net.specs()) {
    const char* act = s.activation == Activation::relu ? "relu" : "identity";
    if (s.kind == LayerKind::dense) {
      out << "dense " << act << ' ' << s.in_dim << ' ' << s.out_dim << '\n';
    } else {
      out << "conv2d " << act << ' ' << s.input.channels << ' ' << s.input.height << ' '
          << s.input.width << ' ' << s.out_channels << ' ' << s.kernel << ' ' << s.stride << '\n';
    }
  }
  for (std::size_t l = 0; l < net.layer_count(); ++l) {
    const auto& p = net.params()[l];
    out << "weight " << l << ' ' << p.weight.rows() << ' ' << p.weight.cols() << '\n';
    for (Eigen::Index r = 0; r < p.weight.rows(); ++r) {
      for (Eigen::Index c = 0; c < p.weight.cols(); ++c)
        out << (c ? " " : "") << format_number(p.weight(r, c));
      out << '\n';
    }
    out << "bias " << l << ' ' << p.bias.size() << '\n';
    for (Eigen::Index i = 0; i < p.bias.size(); ++i)
      out << (i ? " " : "") << format_number(p.bias(i));
    out << '\n';
  }
}

inline void save_checkpoint(const std::filesystem::path& path, const Network& net) {
  std::ofstream out(path);
  if (!out) throw FormatError("cannot write checkpoint " + path.string(), 0);
  save_checkpoint(out, net);
}

namespace detail {

class TokenReader {
public:
  explicit TokenReader(std::istream& in) : in_(in) {}

  std::string word() {
    std::string w;
    if (!(in_ >> w)) fail("unexpected end of file");
    return w;
  }
  void expect(const std::string& w) {
    const auto got = word();
    if (got != w) fail("expected '" + w + "', found '" + got + "'");
  }
  std::size_t size() {
    const auto w = word();
    std::size_t v = 0;
    auto r = std::from_chars(w.data(), w.data() + w.size(), v);
    if (r.ec != std::errc() || r.ptr != w.data() + w.size()) fail("expected an integer, found '" + w + "'");
    return v;
  }
  double real() {
    const auto w = word();
    double v = 0;
    auto r = std::from_chars(w.data(), w.data() + w.size(), v);
    if (r.ec != std::errc() || r.ptr != w.data() + w.size()) fail("expected a number, found '" + w + "'");
    return v;
  }
  [[noreturn]] void fail(const std::string& what) {
    const auto pos = in_ ? static_cast<std::size_t>(in_.tellg()) : 0;
    throw FormatError("checkpoint: " + what, pos);
  }

private:
  std::istream& in_;
};

} // namespace detail

inline Network load_checkpoint(std::istream& in) {
  detail::TokenReader t(in);
  t.expect("switokd-checkpoint");
  if (t.size() != kCheckpointVersion) t.fail("unsupported checkpoint version");
  t.expect("layers");
  const std::size_t layers = t.size();
  std::vector<LayerSpec> specs;
  for (std::size_t l = 0; l < layers; ++l) {
    const auto kind = t.word();
    const auto act_word = t.word();
    if (act_word != "relu" && act_word != "identity") t.fail("unknown activation '" + act_word + "'");
    const Activation act = act_word == "relu" ? Activation::relu : Activation::identity;
    if (kind == "dense") {
      const auto in_dim = t.size();
      const auto out_dim = t.size();
      specs.push_back(LayerSpec::dense(in_dim, out_dim, act));
    } else if (kind == "conv2d") {
      ImageShape img;
      img.channels = t.size();
      img.height = t.size();
      img.width = t.size();
      const auto oc = t.size(), k = t.size(), s = t.size();
      specs.push_back(LayerSpec::conv(img, oc, k, s, act));
    } else {
      t.fail("unknown layer kind '" + kind + "'");
    }
  }
  Network net(std::move(specs));
  for (std::size_t l = 0; l < layers; ++l) {
    auto& p = net.params()[l];
    t.expect("weight");
    if (t.size() != l) t.fail("weight blocks out of order");
    if (t.size() != static_cast<std::size_t>(p.weight.rows()) ||
        t.size() != static_cast<std::size_t>(p.weight.cols()))
      t.fail("weight shape does not match layer " + std::to_string(l));
    for (Eigen::Index r = 0; r < p.weight.rows(); ++r)
      for (Eigen::Index c = 0; c < p.weight.cols(); ++c) p.weight(r, c) = t.real();
    t.expect("bias");
    if (t.size() != l) t.fail("bias blocks out of order");
    if (t.size() != static_cast<std::size_t>(p.bias.size()))
      t.fail("bias shape does not match layer " + std::to_string(l));
    for (Eigen::Index i = 0; i < p.bias.size(); ++i) p.bias(i) = t.real();
  }
  if (!net.all_finite()) throw NumericError("checkpoint: non-finite parameter");
  return net;
}

inline Network load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open checkpoint " + path.string(), 0);
  return load_checkpoint(in);
}

} // namespace switokd
