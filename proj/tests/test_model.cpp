#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <sstream>

#include "gradcheck.hpp"
#include "oracle.hpp"
#include "refquery/bundle.hpp"
#include "refquery/error.hpp"
#include "refquery/model.hpp"
#include "refquery/ops.hpp"
#include "test_util.hpp"

using namespace refquery;
using namespace refquery::model;

namespace {

ModelBundle sample_bundle(const Architecture& arch = gradcheck::tiny_arch()) {
  ModelBundle b;
  b.network = Network(arch, 17);
  b.normalizers = {win::ZNormalizer(300.0f, 250.0f), win::ZNormalizer(400.0f, 600.0f),
                   win::ZNormalizer(40.0f, 200.0f)};
  b.embeddings["kettle"] = nd::l2_normalize(Tensor(Shape{arch.embedding}, 1.0f));
  b.embeddings["fridge"] = nd::l2_normalize(Tensor(Shape{arch.embedding}, -0.5f));
  return b;
}

std::vector<float> random_window(std::size_t n, std::mt19937_64& rng) {
  std::normal_distribution<float> g(0.0f, 1.0f);
  std::vector<float> v(n);
  for (float& x : v) x = g(rng);
  return v;
}

}  // namespace

TEST(Architecture, DeployedParameterCount) {
  const Architecture a;
  EXPECT_EQ(a.encoder_parameter_count(), 210464u);
  EXPECT_EQ(a.head_parameter_count(), 82434u);
  EXPECT_EQ(a.parameter_count(), 292898u);
  EXPECT_EQ(Network(a, 1).params().parameter_count(), 292898u);
  EXPECT_EQ(a.flattened_size(), 1280u);
  EXPECT_EQ(a.length_schedule(),
            (std::vector<std::size_t>{300, 150, 150, 75, 75, 38, 38, 19, 19, 10}));
}

TEST(Architecture, CountMatchesTensorsForOtherSizes) {
  for (std::size_t e : {8u, 16u, 256u}) {
    Architecture a;
    a.embedding = e;
    a.hidden = e / 2;
    EXPECT_EQ(Network(a, 1).params().parameter_count(), a.parameter_count());
  }
}

TEST(Network, RejectsMismatchedParameters) {
  nd::ParamSet ps = Network(gradcheck::tiny_arch(), 1).params();
  Architecture bigger = gradcheck::tiny_arch();
  bigger.embedding = 5;
  EXPECT_THROW(Network(bigger, ps), InvalidShapeError);
  EXPECT_NO_THROW(Network(gradcheck::tiny_arch(), ps));
}

TEST(Network, TrainableGroups) {
  Network n(gradcheck::tiny_arch(), 1);
  n.set_encoder_trainable(false);
  const auto& ps = n.params();
  for (std::size_t i = 0; i < ps.size(); ++i) {
    EXPECT_EQ(ps.trainable(i), ps.name(i).starts_with("head.")) << ps.name(i);
  }
}

TEST(Encoder, UnitNormAndMatchesOracle) {
  std::mt19937_64 rng(3);
  const Network net(Architecture{}, 5);
  const oracle::Net on = oracle::Net::from(net);
  for (int trial = 0; trial < 3; ++trial) {
    const auto w = random_window(599, rng);
    const Tensor e = encode(net, w);
    ASSERT_EQ(e.size(), 128u);
    double norm = 0.0;
    for (float v : e.values()) norm += v * v;
    EXPECT_NEAR(std::sqrt(norm), 1.0, 1e-5);
    const auto ref = oracle::encode(on, oracle::Vec(w.begin(), w.end()));
    for (std::size_t i = 0; i < 128; ++i) EXPECT_NEAR(e[i], ref[i], 1e-5);
  }
}

TEST(Encoder, RejectsWrongWindowLength) {
  const Network net(gradcheck::tiny_arch(), 1);
  std::vector<float> w(15);
  EXPECT_THROW(encode(net, w), InvalidShapeError);
}

TEST(Head, InteractionFeatures) {
  const Tensor f = interaction_features(Tensor::vector({1, 2}), Tensor::vector({3, 5}));
  EXPECT_EQ(std::vector<float>(f.values().begin(), f.values().end()),
            (std::vector<float>{1, 2, 3, 5, 4, 9, 3, 10}));
}

TEST(Head, BatchedMatchesOracleAndBroadcasts) {
  std::mt19937_64 rng(9);
  const Network net(Architecture{}, 2);
  const oracle::Net on = oracle::Net::from(net);
  const std::size_t B = 5;
  const Tensor ref = nd::l2_normalize(Tensor::vector(random_window(128, rng)));
  Tensor q({B, 128});
  for (std::size_t b = 0; b < B; ++b) {
    const Tensor row = nd::l2_normalize(Tensor::vector(random_window(128, rng)));
    std::copy(row.values().begin(), row.values().end(), q.data() + b * 128);
  }
  const float off = -0.3f;
  const HeadOutput out = head_forward(net, ref, q, off);
  ASSERT_EQ(out.power_z.size(), B);
  for (std::size_t b = 0; b < B; ++b) {
    const oracle::Vec er(ref.values().begin(), ref.values().end());
    const oracle::Vec eq(q.data() + b * 128, q.data() + (b + 1) * 128);
    const auto o = oracle::head(on, er, eq, off);
    EXPECT_NEAR(out.state_prob[b], o.prob, 1e-5);
    EXPECT_NEAR(out.power_z[b], o.y, 1e-5);
    EXPECT_GE(out.power_z[b], off);
  }
}

TEST(Head, OffAnchoring) {
  ModelBundle b = sample_bundle(Architecture{});
  // Force the state logit to a huge negative value.
  auto& ps = b.network.params();
  ps.value("head.state.weight").fill(0.0f);
  ps.value("head.state.bias")[0] = -1e4f;
  const HeadOutput out = head_forward(b.network, b.embeddings.at("kettle"),
                                      b.embeddings.at("fridge"), b.off_bias());
  EXPECT_EQ(out.state_prob[0], 0.0f);
  EXPECT_EQ(out.power_z[0], b.off_bias());
  EXPECT_EQ(b.normalizers.power.inverse(out.power_z[0]), 0.0f);
  EXPECT_FLOAT_EQ(b.off_bias(), -40.0f / 200.0f);
}

TEST(Bundle, RoundTripBitExact) {
  const ModelBundle b = sample_bundle();
  testutil::TempDir dir("model");
  save_bundle(b, dir / "m.rq");
  const ModelBundle back = load_bundle(dir / "m.rq");
  EXPECT_EQ(back, b);
  EXPECT_EQ(back.network.params().checksum(), b.network.params().checksum());
  EXPECT_EQ(std::filesystem::file_size(dir / "m.rq"), bundle_layout(b).total());
}

TEST(Bundle, DecodeErrors) {
  const auto bytes = serialize_bundle(sample_bundle());

  auto bad_magic = bytes;
  bad_magic[0] = 'X';
  EXPECT_THROW(deserialize_bundle(bad_magic), FormatError);

  auto bad_version = bytes;
  bad_version[8] = 2;
  EXPECT_THROW(deserialize_bundle(bad_version), VersionMismatchError);

  auto truncated = bytes;
  truncated.resize(bytes.size() / 2);
  EXPECT_THROW(deserialize_bundle(truncated), TruncatedFileError);

  auto flipped = bytes;
  flipped[bytes.size() / 2] ^= 0x01;
  EXPECT_THROW(deserialize_bundle(flipped), ChecksumError);

  auto trailing = bytes;
  trailing.push_back(0);
  EXPECT_THROW(deserialize_bundle(trailing), FormatError);
}

TEST(Bundle, AddingAnEmbeddingGrowsByOneRecord) {
  ModelBundle b = sample_bundle(Architecture{});
  const std::size_t before = serialize_bundle(b).size();
  b.embeddings["microwave"] = nd::l2_normalize(Tensor(Shape{128}, 2.0f));
  const std::size_t after = serialize_bundle(b).size();
  EXPECT_EQ(after - before, embedding_record_bytes("microwave", 128));
  EXPECT_EQ(embedding_record_bytes("microwave", 128), 2u + 9u + 4u + 512u);
  EXPECT_LE(after - before, 1024u);
}

TEST(Bundle, LayoutAccountsForEveryByte) {
  const ModelBundle b = sample_bundle(Architecture{});
  const BundleLayout l = bundle_layout(b);
  EXPECT_EQ(l.total(), serialize_bundle(b).size());
  EXPECT_EQ(l.parameter_bytes, 4u * 292898u);
}

TEST(Bundle, EmbeddingLengthChecked) {
  ModelBundle b = sample_bundle();
  b.embeddings["bad"] = Tensor(Shape{3});
  EXPECT_THROW(serialize_bundle(b), InvalidShapeError);
}

TEST(Bundle, TextExport) {
  ModelBundle b;
  b.network = Network(gradcheck::tiny_arch(), 1);
  b.embeddings["k"] = Tensor::vector({0.5f, -0.5f, 0.5f, -0.5f});
  std::ostringstream out;
  export_embeddings_text(b, out);
  EXPECT_EQ(out.str(), "k: 0.5 -0.5 0.5 -0.5\n");
}
