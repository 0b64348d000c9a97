// Writes a seeded synthetic table in the stroke CSV schema, for smoke runs
// when the real table is not at hand.
#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "strokelab/synthetic.hpp"

int main(int argc, char** argv) {
    CLI::App app{"Generate a synthetic stroke-schema CSV"};
    strokelab::synthetic::CohortOptions options;
    std::string out_path;
    app.add_option("--rows", options.rows, "Number of rows")->capture_default_str();
    app.add_option("--seed", options.seed, "Generator seed")->capture_default_str();
    app.add_option("--missing-bmi", options.missing_bmi_rate, "Fraction of rows without BMI")->capture_default_str();
    app.add_option("--logit-shift", options.logit_shift, "Shift applied to every risk logit")->capture_default_str();
    app.add_option("-o,--out", out_path, "Output file (stdout when omitted)");
    CLI11_PARSE(app, argc, argv);

    try {
        const auto table = strokelab::synthetic::make_cohort(options);
        if (out_path.empty()) {
            strokelab::data::write_csv(std::cout, table);
        } else {
            std::ofstream out(out_path);
            if (!out) {
                std::cerr << "error: cannot write '" << out_path << "'\n";
                return 2;
            }
            strokelab::data::write_csv(out, table);
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
