// fhctl: instance generation, chain building, attacks, ranking evaluation and reports.

#include "fh/experiment.hpp"

#include <CLI11.hpp>

#include <iostream>

namespace
{
struct Common
{
    std::string config;
    std::string out = "out";
    std::size_t workers = 1;
    std::optional< std::uint64_t > seed_override;
};

void add_common(CLI::App* sub, Common& c)
{
    sub->add_option("--config", c.config, "JSON experiment configuration")->required();
    sub->add_option("--out", c.out, "output directory");
    sub->add_option("--workers", c.workers, "worker threads (results do not depend on it)")->check(CLI::PositiveNumber);
    sub->add_option("--seed-override", c.seed_override, "replace the configured seed");
}

fh::ExperimentConfig load(const Common& c)
{
    auto cfg = fh::load_config(c.config);
    if (c.seed_override)
        cfg.seed = *c.seed_override;
    return cfg;
}

void print_verify(const fh::VerifyResult& v)
{
    for (const auto& m : v.messages)
        std::cout << m << '\n';
}
} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"fhctl"};
    app.require_subcommand(1);

    Common gen_o, chain_o, attack_o, rank_o;
    auto* gen = app.add_subcommand("gen", "generate 3-CNF instances and their compiled networks");
    add_common(gen, gen_o);
    auto* chain = app.add_subcommand("chain", "build checkpoint chains for every instance");
    add_common(chain, chain_o);
    auto* attack = app.add_subcommand("attack", "run the configured search arms");
    add_common(attack, attack_o);
    auto* rank = app.add_subcommand("rankeval", "compare gradient and random token rankings to ground truth");
    add_common(rank, rank_o);

    std::vector< std::string > report_inputs;
    std::string report_out;
    std::size_t bin_width = 50;
    std::vector< std::size_t > report_cuts;
    auto* report = app.add_subcommand("report", "merge attack row files into tables and histograms");
    report->add_option("inputs", report_inputs, "attack_rows.csv files")->required()->check(CLI::ExistingFile);
    report->add_option("--out", report_out, "directory for success_table.csv and histogram.csv");
    report->add_option("--bin-width", bin_width, "histogram bin width")->check(CLI::PositiveNumber);
    report->add_option("--cuts", report_cuts, "extra iteration cuts");

    std::string verify_dir;
    auto* verify = app.add_subcommand("verify", "recompute aggregates from row files and compare");
    verify->add_option("dir", verify_dir, "output directory")->required()->check(CLI::ExistingDirectory);

    try
    {
        app.parse(argc, argv);
    }
    catch (const CLI::ParseError& e)
    {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    }

    try
    {
        if (*gen)
        {
            for (const auto& r : fh::cmd_gen(load(gen_o), gen_o.out))
            {
                std::cout << r.id << " vars=" << r.vars << " clauses=" << r.clauses << '\n';
                if (!r.oracle_tractable)
                    std::cerr << "warning: " << r.id << " has " << r.vars << " variables, above the enumeration limit of "
                              << fh::kMaxEnumerationVars << "; no exhaustive satisfiability check is possible\n";
            }
        }
        else if (*chain)
        {
            for (const auto& r : fh::cmd_chain(load(chain_o), chain_o.out, chain_o.workers))
                std::cout << r.id << " t=" << r.t << " endpoint=" << fh::format_double(r.endpoint_value)
                          << (r.reached ? "" : " (partial)") << '\n';
        }
        else if (*attack)
        {
            const auto rep = fh::cmd_attack(load(attack_o), attack_o.out, attack_o.workers);
            std::cout << rep.summary["methods"].dump(2) << '\n';
        }
        else if (*rank)
        {
            const auto rep = fh::cmd_rankeval(load(rank_o), rank_o.out, rank_o.workers);
            std::cout << rep.summary["means"].dump(2) << '\n';
        }
        else if (*report)
        {
            const auto m = fh::merge_attack_csvs(report_inputs, bin_width, report_cuts);
            std::cout << fh::render_report(m);
            if (!report_out.empty())
            {
                fh::write_file(fh::fs::path(report_out) / "success_table.csv", fh::success_table_csv(m));
                fh::write_file(fh::fs::path(report_out) / "histogram.csv", fh::histogram_csv(m));
            }
        }
        else if (*verify)
        {
            const auto v = fh::verify_outputs(verify_dir);
            print_verify(v);
            return v.ok ? 0 : 4;
        }
    }
    catch (const fh::Error& e)
    {
        std::cerr << "error (" << fh::to_string(e.kind()) << "): " << e.what() << '\n';
        return fh::exit_code_for(e.kind());
    }
    catch (const std::exception& e)
    {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
