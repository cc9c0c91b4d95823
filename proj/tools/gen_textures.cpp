// Writes a directory of procedural texture PNGs, e.g. for a quick training
// or evaluation dataset:  aidn-gen-textures --out dir --count 240 --size 128

#include <CLI11.hpp>

#include <cstdio>

#include <aidn/synth.hpp>

int main(int argc, char** argv) {
  CLI::App app{"procedural texture dataset generator"};
  std::string out_dir;
  int count = 240;
  int size = 128;
  unsigned seed = 77;
  app.add_option("--out", out_dir, "output directory")->required();
  app.add_option("--count", count, "number of images");
  app.add_option("--size", size, "image side in pixels");
  app.add_option("--seed", seed, "base seed");
  CLI11_PARSE(app, argc, argv);

  try {
    aidn::write_texture_dataset(out_dir, count, size, seed);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 3;
  }
  std::fprintf(stderr, "wrote %d %dx%d textures to %s\n", count, size, size, out_dir.c_str());
  return 0;
}
