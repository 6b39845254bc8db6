// Generate a small synthetic dataset, train PhysORD for a few epochs and
// compare it with the constant-velocity baseline at the 20th step.
#include <cstdio>

#include "physord/physord.hpp"

using namespace physord;

int main() {
  const Dataset ds = make_dataset(WorldSpec{}, 20, 120, 1);

  TrainConfig cfg;
  cfg.horizon = 20;
  cfg.stride = 5;
  cfg.epochs = 30;
  const TrainResult r = train(ds, cfg, [](const EpochLog& e) {
    std::printf("epoch %2d  train %.5f  val %.5f\n", e.epoch, e.train.total, e.val.total);
  });

  const VehicleParams p = training_params(ds, cfg);
  const auto windows = test_windows(ds, 20, 5);
  const auto ours = evaluate(ds, windows, physord_predictor(r.models, p), 20);
  const auto cv = evaluate(ds, windows, cv_predictor(), 20);
  std::printf("\n%zu params, best epoch %d\n\n", r.models.param_count(), r.best_epoch);
  std::printf("%s", metrics_table_csv({{"cv", cv.report}, {"physord", ours.report}}).c_str());
}
