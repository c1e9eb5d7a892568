// Regenerates the golden fixtures. Only run this when a format change is
// intended; the unit tests compare fresh output against the checked-in files.
#include <iostream>

#include "gradcheck.hpp"
#include "koop/koop.hpp"

int main() {
  const std::string dir = KOOP_FIXTURE_DIR;
  koop::WellGenOptions o;
  o.n_steps = 64;
  o.seed = 42;
  koop::write_dataset(dir + "/well_seed42_n64.kds", koop::gen_dataset(o));

  auto m = koop::make_model<float>(gradcheck::tiny_model(koop::ModelKind::extended, 2024));
  m.training = {{"note", "golden"}};
  koop::save_checkpoint(m, dir + "/tiny_extended.kck");
  std::cout << "wrote fixtures to " << dir << '\n';
}
