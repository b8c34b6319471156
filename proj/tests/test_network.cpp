#include <cmath>

#include <gtest/gtest.h>

#include "gradcheck.hpp"
#include "vinedmp/network.hpp"

using namespace vinedmp;

namespace {

// Direct 3x3 convolution with zero padding, one sample, one output channel.
double naive_conv(const nn::Act& in, const nn::Shape& s, const std::vector<double>& w, int b, int y, int x) {
  double acc = 0.0;
  const Eigen::Index hw = static_cast<Eigen::Index>(s.height) * s.width;
  for (int c = 0; c < s.channels; ++c)
    for (int ky = 0; ky < 3; ++ky)
      for (int kx = 0; kx < 3; ++kx) {
        const int yy = y + ky - 1, xx = x + kx - 1;
        if (yy < 0 || xx < 0 || yy >= s.height || xx >= s.width) continue;
        acc += w[static_cast<std::size_t>((c * 3 + ky) * 3 + kx)] * in(c, b * hw + yy * s.width + xx);
      }
  return acc;
}

}  // namespace

TEST(Im2col, MatchesDirectConvolution) {
  const nn::Shape s{3, 2, 5, 7};
  Rng rng(1);
  nn::Act in(s.channels, s.pixels());
  for (Eigen::Index i = 0; i < in.size(); ++i) in(i) = rng.normal();
  std::vector<double> w(27);
  for (double& v : w) v = rng.normal();
  const nn::Act cols = nn::im2col(in, s);
  ASSERT_EQ(cols.rows(), 27);
  Eigen::Map<const RowMatrix> W(w.data(), 1, 27);
  const RowMatrix out = W * cols;
  for (int b = 0; b < 2; ++b)
    for (int y = 0; y < 5; ++y)
      for (int x = 0; x < 7; ++x) EXPECT_NEAR(out(0, b * 35 + y * 7 + x), naive_conv(in, s, w, b, y, x), 1e-12);
}

TEST(Im2col, Col2imIsTheAdjoint) {
  // <im2col(a), c> == <a, col2im(c)> for random a, c.
  const nn::Shape s{2, 2, 4, 6};
  Rng rng(2);
  nn::Act a(s.channels, s.pixels());
  for (Eigen::Index i = 0; i < a.size(); ++i) a(i) = rng.normal();
  const nn::Act cols = nn::im2col(a, s);
  nn::Act c(cols.rows(), cols.cols());
  for (Eigen::Index i = 0; i < c.size(); ++i) c(i) = rng.normal();
  EXPECT_NEAR(cols.cwiseProduct(c).sum(), a.cwiseProduct(nn::col2im(c, s)).sum(), 1e-10);
}

TEST(Network, ParameterLayout) {
  const auto spec = gradcheck::tiny_spec();
  VisionDmpNetwork net(spec);
  // conv 4x3x3x3 + 4, conv 4x4x3x3 + 4, head 10x4 + 10.
  EXPECT_EQ(net.parameter_count(), 108u + 4 + 144 + 4 + 40 + 10);
  std::size_t next = 0;
  for (const auto& v : net.views()) {
    EXPECT_EQ(v.offset, next) << v.name;
    next += v.size;
  }
  EXPECT_EQ(next, net.parameter_count());
  EXPECT_THROW(net.view("nope"), InvalidArgument);
}

TEST(Network, RejectsBadSpecs) {
  NetworkSpec s;
  s.input_size = 60;  // not divisible by 16
  EXPECT_THROW(VisionDmpNetwork{s}, InvalidArgument);
  s = {};
  s.num_kernels = 1;
  EXPECT_THROW(VisionDmpNetwork{s}, InvalidArgument);
  s = {};
  s.pool_grid = 3;
  EXPECT_THROW(VisionDmpNetwork{s}, InvalidArgument);
}

TEST(Network, HeadBiasGivesConstantOutput) {
  VisionDmpNetwork net(gradcheck::tiny_spec());
  net.initialize(3);
  for (double& v : net.slice("head.weight")) v = 0.0;
  auto b = net.slice("head.bias");
  for (int k = 0; k < 5; ++k) {
    b[static_cast<std::size_t>(k)] = 0.3;
    b[static_cast<std::size_t>(5 + k)] = 0.7;
  }
  std::vector<double> x(3 * 16 * 16, 0.25);
  ForwardCache c;
  const auto& out = net.forward({&x}, c);
  for (int k = 0; k < 5; ++k) {
    EXPECT_EQ(out(k, 0), 0.3);
    EXPECT_EQ(out(5 + k, 0), 0.7);
  }
}

TEST(Network, CoordinateChannels) {
  auto spec = gradcheck::tiny_spec();
  spec.coord_channels = true;
  VisionDmpNetwork net(spec);
  std::vector<double> x(3 * 16 * 16, 0.0);
  nn::Act packed;
  net.pack({&x}, packed);
  ASSERT_EQ(packed.rows(), 5);
  EXPECT_DOUBLE_EQ(packed(3, 0), 0.5 / 16);
  EXPECT_DOUBLE_EQ(packed(3, 15), 15.5 / 16);
  EXPECT_DOUBLE_EQ(packed(4, 16), 1.5 / 16);
  std::vector<double> wrong(10);
  EXPECT_THROW(net.pack({&wrong}, packed), InvalidArgument);
}

TEST(Network, NonFiniteParametersAreReported) {
  VisionDmpNetwork net(gradcheck::tiny_spec());
  net.initialize(4);
  net.slice("head.bias")[0] = std::nan("");
  std::vector<double> x(3 * 16 * 16, 0.5);
  ForwardCache c;
  EXPECT_THROW(net.forward({&x}, c), NonFiniteActivation);
}

TEST(Gradient, MatchesFiniteDifferencesOnEveryParameter) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    auto p = gradcheck::tiny_problem(seed);
    const auto r = gradcheck::check(p);
    EXPECT_EQ(r.checked, p.model.parameters().size());
    EXPECT_EQ(r.failed, 0u) << seed << ": worst " << r.worst << " at " << r.worst_index;
  }
}

TEST(Gradient, ResidualBlocksMatchFiniteDifferences) {
  // Deeper ReLU stacks leave zero maps whose max-pool ties are true kinks.
  // Gradients under 1e-7 sit at the quotient's rounding noise (eps * loss / step).
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    auto p = gradcheck::tiny_problem(seed, true);
    const auto r = gradcheck::check(p, 1e-5, 1e-4, 1e-7, true);
    EXPECT_EQ(r.failed, 0u) << seed << ": worst " << r.worst << " at " << r.worst_index;
    EXPECT_LE(r.kinks, 5u) << seed;
  }
}

TEST(Gradient, ZeroLossGivesZeroGradient) {
  auto p = gradcheck::tiny_problem(13);
  // Constant head: the prediction is W' phi, which the targets copy exactly.
  for (double& v : p.model.network().slice("head.weight")) v = 0.0;
  const auto w = anchored_weights(
      Eigen::Map<const Eigen::VectorXd>(p.model.network().slice("head.bias").data(), 10), 2, 5);
  for (auto& t : p.targets) t = (w * p.model.basis().matrix(uniform_phases(10))).transpose();
  ParamVector g;
  EXPECT_EQ(p.loss(&g), 0.0);
  for (double v : g) EXPECT_LE(std::abs(v), 1e-12);
}

TEST(Gradient, MirrorSymmetricInputGivesMirrorSymmetricFilterGradients) {
  auto p = gradcheck::tiny_problem(14, false, 1);
  auto& net = p.model.network();
  // Mirror-symmetric filters and input: every activation map is mirror symmetric.
  for (const auto& name : {"block0.conv.weight", "block1.conv.weight"}) {
    auto w = net.slice(name);
    for (std::size_t i = 0; i < w.size(); i += 3) w[i + 2] = w[i];
  }
  auto& x = p.inputs[0];
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < 16; ++y)
      for (int xx = 8; xx < 16; ++xx) x[static_cast<std::size_t>((c * 16 + y) * 16 + xx)] = x[static_cast<std::size_t>((c * 16 + y) * 16 + 15 - xx)];
  ParamVector g;
  p.loss(&g);
  for (const auto& name : {"block0.conv.weight", "block1.conv.weight"}) {
    const auto& v = net.view(name);
    for (std::size_t i = 0; i < v.size; i += 3)
      EXPECT_NEAR(g[v.offset + i], g[v.offset + i + 2], 1e-12 * (1.0 + std::abs(g[v.offset + i]))) << name << " " << i;
  }
}
