// Microbenchmarks for the pieces that dominate simulated round time: the
// projection merge, the update codecs, local training, and the Paillier
// paths. Run with --benchmark_filter=... to narrow.

#include <benchmark/benchmark.h>

#include <Eigen/Dense>
#include <cstdint>
#include <vector>

#include "fedlr/compressors.hpp"
#include "fedlr/dataio.hpp"
#include "fedlr/lowrank.hpp"
#include "fedlr/mfmodel.hpp"
#include "fedlr/rng.hpp"
#include "fedlr/secureagg.hpp"
#include "support/synthetic.hpp"

namespace {

using namespace fedlr;

Eigen::MatrixXd gaussian_matrix(int rows, int cols, std::uint64_t key) {
  Rng rng(key);
  Eigen::MatrixXd m(rows, cols);
  for (int j = 0; j < cols; ++j)
    for (int i = 0; i < rows; ++i) m(i, j) = rng.next_gaussian();
  return m;
}

void BM_MergeGlobal(benchmark::State& state) {
  const int d = 64, n = 3706;
  const int r = static_cast<int>(state.range(0));
  Eigen::MatrixXd q = gaussian_matrix(d, n, 1);
  const Eigen::MatrixXd b = sample_b(ProjectionSpec{d, r, 2}, 0);
  const Eigen::MatrixXd a = 0.01 * gaussian_matrix(r, n, 3);
  for (auto _ : state) {
    merge_global(q, b, a, 1.0);
    benchmark::DoNotOptimize(q.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(d) * n);
}
BENCHMARK(BM_MergeGlobal)->Arg(2)->Arg(8)->Arg(32);

void BM_SampleProjection(benchmark::State& state) {
  const int r = static_cast<int>(state.range(0));
  int round = 0;
  for (auto _ : state) {
    const Eigen::MatrixXd b = sample_b(ProjectionSpec{64, r, 7}, round++);
    benchmark::DoNotOptimize(b.data());
  }
}
BENCHMARK(BM_SampleProjection)->Arg(2)->Arg(8)->Arg(32);

void BM_TopkCompress(benchmark::State& state) {
  const Eigen::MatrixXd m = gaussian_matrix(64, 3706, 4);
  for (auto _ : state) {
    SparsePayload p = topk_compress(m, 0.1);
    benchmark::DoNotOptimize(p.values.data());
  }
}
BENCHMARK(BM_TopkCompress);

void BM_SvdTruncate(benchmark::State& state) {
  const Eigen::MatrixXd m = gaussian_matrix(64, 512, 5);
  const int r = static_cast<int>(state.range(0));
  for (auto _ : state) {
    SvdPayload p = svd_truncate(m, r);
    benchmark::DoNotOptimize(p.s.data());
  }
}
BENCHMARK(BM_SvdTruncate)->Arg(4)->Arg(16);

void BM_LocalTrainDense(benchmark::State& state) {
  fedlr::testsupport::CorpusSpec spec;
  spec.users = 16;
  spec.items = 400;
  spec.min_per_user = 40;
  spec.max_per_user = 60;
  spec.seed = 21;
  const auto table = build_table(
      parse_ratings_text(fedlr::testsupport::planted_corpus(spec), RatingsFormat::kTab), 5);
  const GlobalModel model = init_model(32, table.num_items(), 0.01, 9);
  LocalConfig cfg;
  cfg.epochs = 1;
  cfg.batch_size = 32;
  cfg.negative_ratio = 4;
  std::uint64_t round = 0;
  for (auto _ : state) {
    ClientState st{0, init_user_embedding(32, 0.01, 9, 0)};
    Rng shuffle = Rng::keyed(9, purpose::kTrainShuffle, round, 0);
    Rng negatives = Rng::keyed(9, purpose::kTrainNeg, round, 0);
    ++round;
    DenseResult res = local_train_dense(st, model, table, cfg, shuffle, negatives);
    benchmark::DoNotOptimize(res.delta_q.data());
  }
}
BENCHMARK(BM_LocalTrainDense);

void BM_PaillierEncrypt(benchmark::State& state) {
  const PaillierKeys keys = paillier_keygen(static_cast<int>(state.range(0)), 77);
  Rng rng(6);
  std::int64_t v = 12345;
  for (auto _ : state) {
    mpz_class c = keys.pub.encrypt_signed(v++, rng);
    benchmark::DoNotOptimize(c.get_mpz_t());
  }
}
BENCHMARK(BM_PaillierEncrypt)->Arg(256)->Arg(1024);

void BM_PaillierAdd(benchmark::State& state) {
  const PaillierKeys keys = paillier_keygen(static_cast<int>(state.range(0)), 78);
  Rng rng(7);
  const mpz_class c1 = keys.pub.encrypt_signed(111, rng);
  mpz_class acc = keys.pub.encrypt_signed(222, rng);
  for (auto _ : state) {
    acc = keys.pub.add(acc, c1);
    benchmark::DoNotOptimize(acc.get_mpz_t());
  }
}
BENCHMARK(BM_PaillierAdd)->Arg(256)->Arg(1024);

void BM_PackEncrypt(benchmark::State& state) {
  const PaillierKeys keys = paillier_keygen(256, 79);
  const FixedPointCodec codec;
  Rng vals(8);
  std::vector<std::int64_t> ints(static_cast<std::size_t>(state.range(0)));
  for (auto& v : ints)
    v = static_cast<std::int64_t>(vals.next_below(2 * 8388607ull)) - 8388606;
  std::uint64_t round = 0;
  for (auto _ : state) {
    Rng noise = Rng::keyed(8, purpose::kEncNoise, round++, 0);
    SecurePayload p = pack_encrypt(ints, codec, 8096, keys.pub, noise);
    benchmark::DoNotOptimize(p.blocks.data());
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_PackEncrypt)->Arg(500)->Arg(8096);

}  // namespace

BENCHMARK_MAIN();
