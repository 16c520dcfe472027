#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "ncde/bounds.hpp"
#include "ncde/model.hpp"
#include "ncde/verify.hpp"

using namespace ncde;

namespace {

ModelParams random_model(Dims dims, Activation act, std::uint64_t seed) {
  Rng rng(seed);
  return init_uniform_fan_in(dims, act, rng);
}

}  // namespace

TEST(Activation, NamesRoundTrip) {
  for (auto a : {Activation::tanh, Activation::identity, Activation::relu}) {
    EXPECT_EQ(activation_from_name(activation_name(a)), a);
    EXPECT_EQ(activation_lipschitz(a), 1.0);
  }
  EXPECT_THROW((void)activation_from_name("sigmoid"), ValidationError);
}

TEST(VectorField, ZeroNetworkGivesZeroMatrix) {
  for (auto a : {Activation::tanh, Activation::identity, Activation::relu}) {
    const auto m = ModelParams::zeros(Dims{3, 4, 2}, a);
    const Eigen::MatrixXd G = vector_field_eval(m, Eigen::VectorXd::Constant(4, 2.5));
    EXPECT_EQ(G.rows(), 4);
    EXPECT_EQ(G.cols(), 2);
    EXPECT_EQ(G.norm(), 0.0);
  }
}

TEST(VectorField, ConstantFieldFromBias) {
  auto m = ModelParams::zeros(Dims{1, 2, 3}, Activation::identity);
  Eigen::MatrixXd B(2, 3);
  B << 1, 2, 3, 4, 5, 6;
  for (int i = 0; i < 2; ++i) {
    for (int j = 0; j < 3; ++j) m.vf.layers[0].b[i * 3 + j] = B(i, j);
  }
  for (double s : {-3.0, 0.0, 7.0}) {
    EXPECT_EQ(vector_field_eval(m, Eigen::VectorXd::Constant(2, s)), B);
  }
}

TEST(VectorField, TwoLayerTanhByHand) {
  auto m = ModelParams::zeros(Dims{2, 2, 1}, Activation::tanh);
  m.vf.layers[0].A << 0.1, 0.2, 0.3, -0.4;
  m.vf.layers[0].b << 0.05, -0.1;
  m.vf.layers[1].A << 1.0, -1.0, 0.5, 2.0;
  m.vf.layers[1].b << 0.0, 0.1;
  Eigen::VectorXd z(2);
  z << 0.5, -0.25;
  // h1 = tanh(A1 z + b1) = tanh(0.05, 0.15)
  const double h0 = std::tanh(0.1 * 0.5 + 0.2 * -0.25 + 0.05);
  const double h1 = std::tanh(0.3 * 0.5 - 0.4 * -0.25 - 0.1);
  const double o0 = std::tanh(h0 - h1);
  const double o1 = std::tanh(0.5 * h0 + 2.0 * h1 + 0.1);
  const Eigen::MatrixXd G = vector_field_eval(m, z);
  EXPECT_NEAR(G(0, 0), o0, 1e-15);
  EXPECT_NEAR(G(1, 0), o1, 1e-15);
}

TEST(VectorField, RowMajorReshape) {
  auto m = ModelParams::zeros(Dims{1, 2, 2}, Activation::identity);
  m.vf.layers[0].b << 1, 2, 3, 4;
  const Eigen::MatrixXd G = vector_field_eval(m, Eigen::VectorXd::Zero(2));
  EXPECT_EQ(G(0, 1), 2.0);
  EXPECT_EQ(G(1, 0), 3.0);
}

TEST(VectorField, ShapeMismatchIsRejected) {
  const auto m = ModelParams::zeros(Dims{1, 3, 2});
  EXPECT_THROW((void)vector_field_eval(m, Eigen::VectorXd::Zero(2)), ValidationError);
}

TEST(InitState, Examples) {
  auto m = ModelParams::zeros(Dims{1, 3, 3}, Activation::tanh);
  Eigen::VectorXd x0(3);
  x0 << 0.01, -0.02, 0.03;
  EXPECT_EQ(init_state(m, x0).norm(), 0.0);
  m.U = Eigen::MatrixXd::Identity(3, 3);
  const Eigen::VectorXd z = init_state(m, x0);
  for (int i = 0; i < 3; ++i) EXPECT_DOUBLE_EQ(z[i], std::tanh(x0[i]));
  EXPECT_THROW((void)init_state(m, Eigen::VectorXd::Zero(2)), ValidationError);
}

TEST(InitState, NormBound) {
  for (std::uint64_t s = 0; s < 200; ++s) {
    Rng rng(s);
    auto m = init_uniform_fan_in(Dims{1, 4, 3}, Activation::relu, rng);
    const Eigen::VectorXd x0 = sample_in_ball(3, 2.0, rng);
    EXPECT_LE(init_state(m, x0).norm(), m.U.norm() * x0.norm() + m.v.norm() + 1e-12);
  }
}

TEST(Forward, ZeroFieldFreezesState) {
  auto m = random_model(Dims{2, 3, 2}, Activation::tanh, 4);
  for (auto& L : m.vf.layers) {
    L.A.setZero();
    L.b.setZero();
  }
  const auto paths = sample_fbm(1, 2, SamplingGrid::uniform(20), 0.5, 1);
  const auto tr = forward(m, paths[0]);
  const Eigen::VectorXd z0 = init_state(m, paths[0].values.row(0).transpose());
  for (Eigen::Index k = 0; k < tr.states.rows(); ++k) {
    EXPECT_EQ(Eigen::VectorXd(tr.states.row(k).transpose()), z0);
  }
  EXPECT_DOUBLE_EQ(tr.prediction, m.phi.dot(z0));
}

TEST(Forward, ConstantFieldTelescopes) {
  auto m = random_model(Dims{1, 2, 2}, Activation::identity, 5);
  m.vf.layers[0].A.setZero();
  Eigen::MatrixXd B(2, 2);
  B << 0.3, -0.7, 1.1, 0.2;
  for (int i = 0; i < 2; ++i) {
    for (int j = 0; j < 2; ++j) m.vf.layers[0].b[i * 2 + j] = B(i, j);
  }
  const auto x = sample_fbm(1, 2, SamplingGrid::uniform(50), 0.3, 8).front();
  const auto tr = forward(m, x);
  const Eigen::VectorXd z0 = init_state(m, x.values.row(0).transpose());
  const Eigen::VectorXd expect = z0 + B * (x.values.row(49) - x.values.row(0)).transpose();
  EXPECT_NEAR((Eigen::VectorXd(tr.states.row(49).transpose()) - expect).norm(), 0.0, 1e-12);
}

TEST(Forward, TrajectoryInvariants) {
  const auto m = random_model(Dims{2, 3, 2}, Activation::tanh, 6);
  const auto x = sample_fbm(1, 2, SamplingGrid::uniform(30), 0.5, 2).front();
  const auto tr = forward(m, x);
  EXPECT_EQ(tr.grid, x.grid);
  EXPECT_EQ(Eigen::VectorXd(tr.states.row(0).transpose()), init_state(m, x.values.row(0).transpose()));
  EXPECT_EQ(tr.prediction, m.phi.dot(tr.states.row(29)));
  // Manual recursion as an oracle.
  Eigen::VectorXd z = init_state(m, x.values.row(0).transpose());
  for (Eigen::Index k = 1; k < 30; ++k) {
    z += vector_field_eval(m, z) * (x.values.row(k) - x.values.row(k - 1)).transpose();
  }
  EXPECT_NEAR((z - tr.states.row(29).transpose()).norm(), 0.0, 1e-13);
}

TEST(Forward, DimensionMismatchIsRejected) {
  const auto m = random_model(Dims{1, 3, 3}, Activation::tanh, 1);
  const auto x = sample_fbm(1, 2, SamplingGrid::uniform(5), 0.5, 2).front();
  EXPECT_THROW((void)forward(m, x), ValidationError);
}

TEST(Forward, NonFiniteStateReportsStep) {
  auto m = ModelParams::zeros(Dims{1, 1, 1}, Activation::identity);
  m.vf.layers[0].A(0, 0) = 1e200;
  m.v[0] = 1.0;
  m.U(0, 0) = 0.0;
  m.phi[0] = 1.0;
  RowMatrix v(4, 1);
  v << 0, 1e200, 2e200, 3e200;
  const SampledPath x(SamplingGrid::uniform(4), v);
  try {
    (void)forward(m, x);
    FAIL() << "expected NumericError";
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("step"), std::string::npos);
  }
}

TEST(Forward, RefiningWherePathIsConstantKeepsEndpoint) {
  const auto m = random_model(Dims{2, 3, 2}, Activation::tanh, 12);
  const auto coarse = sample_fbm(1, 2, SamplingGrid({0.0, 0.3, 0.6, 1.0}), 0.5, 3).front();
  const auto fine = fill_forward(coarse, SamplingGrid({0.0, 0.1, 0.2, 0.3, 0.45, 0.6, 0.9, 1.0}));
  const auto a = forward(m, coarse);
  const auto b = forward(m, fine);
  EXPECT_EQ(a.prediction, b.prediction);
  EXPECT_EQ(a.states.row(3), b.states.row(7));
}

TEST(ForwardBatch, MatchesIndividualCalls) {
  const auto m = random_model(Dims{2, 3, 2}, Activation::tanh, 7);
  EXPECT_TRUE(forward_batch(m, {}, 2).empty());
  auto paths = sample_fbm(9, 2, SamplingGrid::uniform(25), 0.6, 4);
  paths.push_back(paths[0]);
  const auto batch = forward_batch(m, paths, 3);
  ASSERT_EQ(batch.size(), paths.size());
  for (std::size_t i = 0; i < paths.size(); ++i) {
    const auto single = forward(m, paths[i]);
    EXPECT_EQ(batch[i].states, single.states);
    EXPECT_EQ(batch[i].prediction, single.prediction);
  }
  EXPECT_EQ(batch.front().states, batch.back().states);
}

TEST(ForwardBatch, ErrorNamesThePath) {
  const auto m = random_model(Dims{1, 3, 2}, Activation::tanh, 7);
  auto paths = sample_fbm(3, 2, SamplingGrid::uniform(5), 0.6, 4);
  paths[1] = sample_fbm(1, 3, SamplingGrid::uniform(5), 0.6, 4).front();
  try {
    (void)forward_batch(m, paths, 1);
    FAIL() << "expected ValidationError";
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("path 1"), std::string::npos);
  }
}

TEST(ModelParams, ValidateCatchesBadShapes) {
  auto m = ModelParams::zeros(Dims{2, 3, 2});
  EXPECT_NO_THROW(m.validate());
  m.vf.layers[1].A = Eigen::MatrixXd::Zero(3, 3);
  EXPECT_THROW(m.validate(), ValidationError);
}

TEST(ParamGroups, OrderAndLabels) {
  const auto m = ModelParams::zeros(Dims{3, 2, 2});
  std::vector<std::string> labels;
  for (const auto& g : param_groups(m)) labels.push_back(group_label(g.kind, g.layer));
  EXPECT_EQ(labels, (std::vector<std::string>{"phi", "A1", "A2", "A3", "b1", "b2", "b3", "U", "v"}));
}

TEST(InitUniform, RespectsFanInBounds) {
  Rng rng(3);
  const auto m = init_uniform_fan_in(Dims{2, 4, 5}, Activation::tanh, rng);
  EXPECT_LE(m.U.cwiseAbs().maxCoeff(), 1.0 / std::sqrt(5.0));
  EXPECT_LE(m.v.cwiseAbs().maxCoeff(), 1.0 / std::sqrt(5.0));
  EXPECT_LE(m.vf.layers[1].A.cwiseAbs().maxCoeff(), 0.5);
  EXPECT_LE(m.phi.cwiseAbs().maxCoeff(), 0.5);
  EXPECT_GT(m.phi.norm(), 0.0);
}

TEST(ModelJson, RoundTripIsExact) {
  const auto m = random_model(Dims{3, 3, 2}, Activation::relu, 99);
  const auto j = model_to_json(m);
  EXPECT_EQ(j["format"], "ncde-model-params");
  EXPECT_EQ(j["flattening"], "row_major_p_by_d");
  const auto back = model_from_json(nlohmann::json::parse(j.dump()));
  EXPECT_EQ(back.dims, m.dims);
  EXPECT_EQ(back.activation, m.activation);
  EXPECT_EQ(back.phi, m.phi);
  EXPECT_EQ(back.U, m.U);
  for (std::size_t h = 0; h < 3; ++h) {
    EXPECT_EQ(back.vf.layers[h].A, m.vf.layers[h].A);
    EXPECT_EQ(back.vf.layers[h].b, m.vf.layers[h].b);
  }
  auto bad = j;
  bad["version"] = 99;
  EXPECT_THROW((void)model_from_json(bad), ValidationError);
}

// Output bound and field Lipschitz property on random draws.
TEST(ModelProperties, OutputBoundAndFieldLipschitz) {
  ParamSpace s = reference_space();
  s.q = 2;
  s.B_A = 1.3;
  s.B_b = 0.7;
  EXPECT_TRUE(check_output_bound(s, 2000, 21).passed());
  const auto lip = check_field_lipschitz(s, 2000, 22);
  EXPECT_TRUE(lip.passed()) << lip.worst_case;
  ASSERT_EQ(lip.strata.size(), 2u);
  EXPECT_EQ(lip.strata[1].name, "field_at_zero");
}
