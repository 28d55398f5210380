// Writes the synthetic 1,000-work fixture (corpus, taxonomy, population
// table, full texts and a mock-backend config) into a directory.

#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "scholarpipe/fixture.hpp"

int main(int argc, char** argv) {
  CLI::App app{"make_fixture: synthetic corpus with a planted label composition"};
  std::string dir;
  scholarpipe::fixture::FixtureOptions opt;
  app.add_option("dir", dir, "output directory")->required();
  app.add_option("--seed", opt.seed, "generator seed");
  CLI11_PARSE(app, argc, argv);
  try {
    auto p = scholarpipe::fixture::write_fixture(dir, opt);
    std::cout << p.config.string() << "\n";
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
