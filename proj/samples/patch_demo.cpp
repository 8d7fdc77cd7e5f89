// Pretrain a small open-vocabulary classifier, patch it on a new task and
// print the accuracy frontier along the interpolation path.
#include <cstdio>
#include <vector>

#include "paintkit/patch_pipeline.hpp"

int main() {
  using namespace paintkit;

  TaskGenConfig gen;
  gen.seed = 1;
  gen.num_classes = 16;
  gen.dim = 8;
  gen.samples_per_class = 60;
  gen.noise_scale = 0.5;
  const auto tasks = generate_tasks(gen, {{"base", {0, 1, 2, 3, 4, 5, 6, 7, 8, 9}}, {"new", {10, 11, 12, 13, 14, 15}}});
  const std::vector<TaskDataset> supported{tasks[0]};

  ModelConfig arch;
  arch.input_dim = gen.dim;
  arch.hidden = {32};
  arch.embed_dim = 16;

  TrainConfig pre;
  pre.iterations = 600;
  pre.peak_lr = 1e-2;
  const ToyModel zs = pretrain(arch, pre, supported);

  PatchSpec spec;
  spec.train.iterations = 200;
  spec.train.peak_lr = 1e-2;
  spec.train.warmup = 20;
  const PatchResult r = patch_single(zs, tasks[1], supported, spec);

  std::printf("alpha  supported  new\n");
  for (const auto& p : r.frontiers.at(0).frontier.points()) {
    std::printf("%5.2f  %9.1f  %5.1f\n", p.alpha, p.supported_acc, p.patching_acc);
  }
  std::printf("chosen alpha %.2f\n", r.coeffs.values.at(0));
  for (const auto& a : r.accuracies) {
    std::printf("%-5s test %.1f (zero-shot %.1f)\n", a.task.c_str(), a.test, a.zero_shot_test);
  }
  const auto& f = r.frontiers.at(0).frontier;
  std::printf("distance_to_optimal %.4f\n", distance_to_optimal(f));
  return 0;
}
