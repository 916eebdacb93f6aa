#include "vegs/lidar/bundle.hpp"
#include "vegs/synthetic/bundles.hpp"

#include <CLI11.hpp>

#include <iostream>
#include <string>

int main(int argc, char** argv) {
    using namespace vegs;
    CLI::App app{"Write synthetic scene bundles"};
    app.require_subcommand(1);

    synthetic::CorridorOptions corridor;
    std::string corridor_out;
    auto* c_corridor = app.add_subcommand("corridor", "Ground plane between two textured walls");
    c_corridor->add_option("--out", corridor_out, "Bundle directory")->required();
    c_corridor->add_option("--frames", corridor.frames, "Frame count")->capture_default_str();
    c_corridor->add_option("--width", corridor.image_width, "Image width")->capture_default_str();
    c_corridor->add_option("--height", corridor.image_height, "Image height")->capture_default_str();
    c_corridor->add_option("--focal", corridor.focal, "Focal length (px)")->capture_default_str();

    synthetic::MovingBoxOptions box;
    std::string box_out;
    auto* c_box = app.add_subcommand("moving-box", "One textured box driving past a wall");
    c_box->add_option("--out", box_out, "Bundle directory")->required();
    c_box->add_option("--frames", box.frames, "Frame count")->capture_default_str();
    c_box->add_option("--width", box.image_width, "Image width")->capture_default_str();
    c_box->add_option("--height", box.image_height, "Image height")->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }
    try {
        if (c_corridor->parsed()) save_bundle(synthetic::make_corridor_bundle(corridor), corridor_out);
        if (c_box->parsed()) save_bundle(synthetic::make_moving_box_bundle(box), box_out);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
