#include <random>

#include "nuner/numerics/gradcheck.hpp"
#include "nuner/numerics/ops.hpp"

namespace nuner::num {

namespace {

Tensor<double> random_tensor(Shape shape, std::mt19937_64& rng, double scale = 1.0, double offset = 0.0) {
  std::normal_distribution<double> dist(0.0, scale);
  Tensor<double> t(std::move(shape));
  for (double& v : t.values()) v = dist(rng) + offset;
  return t;
}

}  // namespace

std::vector<OpCheck> op_gradient_suite(double tolerance, std::uint64_t seed) {
  std::mt19937_64 rng(seed ^ 0x6F70636865636BULL);
  Parameter<double> a("a", random_tensor({3, 4}, rng));
  Parameter<double> b("b", random_tensor({4, 5}, rng));
  Parameter<double> c("c", random_tensor({3, 4}, rng));
  Parameter<double> row("row", random_tensor({4}, rng));
  Parameter<double> table("table", random_tensor({6, 4}, rng));
  Parameter<double> gamma("gamma", random_tensor({4}, rng, 0.3, 1.0));
  Parameter<double> beta("beta", random_tensor({4}, rng, 0.3));
  Parameter<double> kinked("kinked", random_tensor({3, 4}, rng));
  for (double& v : kinked.value.values()) v += v > 0 ? 0.1 : -0.1;
  Parameter<double> probs("probs", Tensor<double>({3, 4}));
  for (double& v : probs.value.values()) v = 0.1 + 0.8 * uniform01(rng);

  // Weighted sums give every output element a distinct O(1) gradient.
  std::vector<Tensor<double>> weights;
  for (int i = 0; i < 16; ++i) weights.push_back(random_tensor({8, 8}, rng));
  auto weighted = [&](Var<double> x, int w) {
    Tensor<double> t(x.shape());
    const auto& src = weights[static_cast<std::size_t>(w)].values();
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = src[i % src.size()];
    return sum(mul(x, x.tape->constant(std::move(t))));
  };

  const std::vector<int> ids = {1, 3, 3, 5, 0};
  const std::vector<int> labels = {2, -1, 0};
  const Tensor<double> targets({3, 4}, {1, 0, 0, 1, 0, 1, 1, 0, 0, 0, 1, 1});
  const std::vector<std::uint8_t> mask = {1, 0, 1};
  const std::uint64_t dropout_seed = rng();

  struct Case {
    const char* name;
    LossBuilder build;
    std::vector<Parameter<double>*> params;
  };
  const std::vector<Case> cases = {
      {"matmul", [&](Tape<double>& t) { return weighted(matmul(t.leaf(a), t.leaf(b)), 0); }, {&a, &b}},
      {"transpose", [&](Tape<double>& t) { return weighted(transpose(t.leaf(a)), 1); }, {&a}},
      {"add", [&](Tape<double>& t) { return weighted(add(t.leaf(a), t.leaf(c)), 2); }, {&a, &c}},
      {"add_row", [&](Tape<double>& t) { return weighted(add(t.leaf(a), t.leaf(row)), 3); }, {&a, &row}},
      {"mul", [&](Tape<double>& t) { return weighted(mul(t.leaf(a), t.leaf(c)), 4); }, {&a, &c}},
      {"scale", [&](Tape<double>& t) { return weighted(scale(t.leaf(a), 1.7), 5); }, {&a}},
      {"sum", [&](Tape<double>& t) { return sum(mul(t.leaf(a), t.leaf(c))); }, {&a, &c}},
      {"mean", [&](Tape<double>& t) { return mean(mul(t.leaf(a), t.leaf(a))); }, {&a}},
      {"embedding_lookup", [&](Tape<double>& t) { return weighted(embedding_lookup(t.leaf(table), ids), 6); },
       {&table}},
      {"layer_norm",
       [&](Tape<double>& t) { return weighted(layer_norm(t.leaf(a), t.leaf(gamma), t.leaf(beta)), 7); },
       {&a, &gamma, &beta}},
      {"relu", [&](Tape<double>& t) { return weighted(relu(t.leaf(kinked)), 8); }, {&kinked}},
      {"softmax", [&](Tape<double>& t) { return weighted(softmax(t.leaf(a)), 9); }, {&a}},
      {"dropout",
       [&](Tape<double>& t) {
         std::mt19937_64 mask_rng(dropout_seed);
         return weighted(dropout(t.leaf(a), 0.3, mask_rng, true), 10);
       },
       {&a}},
      {"concat_rows", [&](Tape<double>& t) { return weighted(concat<double>({t.leaf(a), t.leaf(c)}, 0), 11); },
       {&a, &c}},
      {"concat_cols", [&](Tape<double>& t) { return weighted(concat<double>({t.leaf(a), t.leaf(c)}, 1), 12); },
       {&a, &c}},
      {"mean_pool", [&](Tape<double>& t) { return weighted(mean_pool(t.leaf(a)), 13); }, {&a}},
      {"slice_cols", [&](Tape<double>& t) { return weighted(slice_cols(t.leaf(a), 1, 2), 14); }, {&a}},
      {"temp_sigmoid", [&](Tape<double>& t) { return weighted(temp_sigmoid(t.leaf(a), 5.0), 15); }, {&a}},
      {"bce_loss", [&](Tape<double>& t) { return bce_loss(t.leaf(probs), targets, mask); }, {&probs}},
      {"softmax_cross_entropy", [&](Tape<double>& t) { return softmax_cross_entropy(t.leaf(a), labels); }, {&a}},
  };

  GradCheckOptions options;
  options.tolerance = tolerance;
  options.seed = seed;
  std::vector<OpCheck> out;
  for (const Case& tc : cases) out.push_back({tc.name, grad_check(tc.build, tc.params, options)});
  return out;
}

}  // namespace nuner::num
