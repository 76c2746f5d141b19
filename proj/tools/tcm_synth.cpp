// Writes a folder of procedurally generated RGB images, for smoke tests and
// desk-scale training runs without a real dataset.
#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>

#include "tcm/errors.hpp"
#include "tcm/image.hpp"
#include "tcm/synthetic.hpp"

int main(int argc, char** argv) {
    CLI::App app{"Generate synthetic training/evaluation images"};
    std::string out;
    int count = 20, width = 256, height = 256;
    std::uint64_t seed = 1;
    app.add_option("--out", out, "Output folder (created if missing)")->required();
    app.add_option("--count", count, "Number of images")->check(CLI::PositiveNumber);
    app.add_option("--width", width)->check(CLI::PositiveNumber);
    app.add_option("--height", height)->check(CLI::PositiveNumber);
    app.add_option("--seed", seed, "Image i uses seed + i");
    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 2;
    }
    try {
        std::filesystem::create_directories(out);
        for (int i = 0; i < count; ++i) {
            char name[32];
            std::snprintf(name, sizeof name, "synth_%04d.png", i);
            tcm::write_image((std::filesystem::path(out) / name).string(),
                             tcm::synthetic_image(width, height, seed + static_cast<std::uint64_t>(i)));
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    std::cout << "wrote " << count << " images to " << out << "\n";
    return 0;
}
