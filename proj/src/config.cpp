#include "mknock/config.hpp"

#include <fstream>
#include <json.hpp>
#include <set>
#include <sstream>

#include "mknock/common.hpp"
#include "mknock/csv.hpp"

namespace mknock {

namespace {

using nlohmann::json;

[[noreturn]] void bad_key(const std::string& key, const std::string& expected) {
    throw config_error("config key '" + key + "': expected " + expected);
}

int get_int(const json& j, const std::string& key) {
    if (!j.at(key).is_number_integer()) bad_key(key, "an integer");
    return j.at(key).get<int>();
}

double get_num(const json& j, const std::string& key) {
    if (!j.at(key).is_number()) bad_key(key, "a number");
    return j.at(key).get<double>();
}

std::string get_str(const json& j, const std::string& key) {
    if (!j.at(key).is_string()) bad_key(key, "a string");
    return j.at(key).get<std::string>();
}

}  // namespace

ExperimentConfig parse_config_text(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw config_error(std::string("config is not valid JSON: ") + e.what());
    }
    if (!j.is_object()) throw config_error("config must be a JSON object");

    static const std::set<std::string> known = {
        "n", "p", "k", "amplitude", "covariance", "d_list", "batches", "b",
        "partition", "methods", "alpha_grid", "replicates", "m_b", "seed",
        "nlambda_multiplier", "grid_ratio", "sigma_known", "threads"};
    for (const auto& [key, value] : j.items())
        if (!known.count(key)) throw config_error("unknown config key '" + key + "'");
    for (const std::string& required : {"n", "p", "k", "amplitude", "d_list"})
        if (!j.contains(required))
            throw config_error("missing required config key '" + required + "'");
    if (j.contains("batches") && j.contains("b"))
        throw config_error("give either 'batches' or 'b', not both");

    ExperimentConfig cfg;
    cfg.n = get_int(j, "n");
    cfg.p = get_int(j, "p");
    cfg.k = get_int(j, "k");
    cfg.amplitude = get_num(j, "amplitude");

    if (!j.at("d_list").is_array()) bad_key("d_list", "an array of integers");
    cfg.d_list.clear();
    for (const auto& v : j.at("d_list")) {
        if (!v.is_number_integer()) bad_key("d_list", "an array of integers");
        cfg.d_list.push_back(v.get<int>());
    }

    if (j.contains("covariance")) {
        const json& cov = j.at("covariance");
        if (!cov.is_object()) bad_key("covariance", "an object {type, rho}");
        for (const auto& [key, value] : cov.items())
            if (key != "type" && key != "rho")
                throw config_error("unknown config key 'covariance." + key + "'");
        if (cov.contains("type")) {
            const std::string t = get_str(cov, "type");
            if (t == "toeplitz")
                cfg.covariance.type = CovarianceSpec::Type::toeplitz;
            else if (t == "equicorrelated")
                cfg.covariance.type = CovarianceSpec::Type::equicorrelated;
            else
                bad_key("covariance.type", "'toeplitz' or 'equicorrelated'");
        }
        if (cov.contains("rho")) cfg.covariance.rho = get_num(cov, "rho");
    }

    if (j.contains("batches"))
        cfg.batches = get_int(j, "batches");
    else if (j.contains("b"))
        cfg.batches = get_int(j, "b");

    if (j.contains("partition")) {
        cfg.partition = partition_method_from_string(get_str(j, "partition"));
    } else {
        cfg.partition = cfg.batches == 1 ? PartitionMethod::single
                                         : PartitionMethod::clustered;
    }

    if (j.contains("methods")) {
        if (!j.at("methods").is_array()) bad_key("methods", "an array of strings");
        cfg.methods.clear();
        for (const auto& v : j.at("methods")) {
            if (!v.is_string()) bad_key("methods", "an array of strings");
            cfg.methods.push_back(method_from_string(v.get<std::string>()));
        }
    } else {
        cfg.methods = {method_from_string("mirror")};
    }

    if (j.contains("alpha_grid")) {
        if (!j.at("alpha_grid").is_array()) bad_key("alpha_grid", "an array of numbers");
        cfg.alpha_grid.clear();
        for (const auto& v : j.at("alpha_grid")) {
            if (!v.is_number()) bad_key("alpha_grid", "an array of numbers");
            cfg.alpha_grid.push_back(v.get<double>());
        }
    } else {
        cfg.alpha_grid = default_alpha_grid();
    }

    if (j.contains("replicates")) cfg.replicates = get_int(j, "replicates");
    if (j.contains("m_b")) cfg.m_b = get_int(j, "m_b");
    if (j.contains("seed")) {
        if (!j.at("seed").is_number_integer()) bad_key("seed", "an integer");
        cfg.seed = j.at("seed").get<std::uint64_t>();
    }
    if (j.contains("nlambda_multiplier"))
        cfg.nlambda_multiplier = get_int(j, "nlambda_multiplier");
    if (j.contains("grid_ratio")) cfg.grid_ratio = get_num(j, "grid_ratio");
    if (j.contains("sigma_known")) {
        if (!j.at("sigma_known").is_null())
            cfg.sigma_known = get_num(j, "sigma_known");
    }
    if (j.contains("threads")) cfg.threads = get_int(j, "threads");

    validate_config(cfg);
    return cfg;
}

ExperimentConfig parse_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw io_error("cannot open config '" + path + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_config_text(ss.str());
}

std::string config_to_json(const ExperimentConfig& cfg) {
    json j;
    j["n"] = cfg.n;
    j["p"] = cfg.p;
    j["k"] = cfg.k;
    j["amplitude"] = cfg.amplitude;
    j["covariance"] = {
        {"type", cfg.covariance.type == CovarianceSpec::Type::toeplitz
                     ? "toeplitz"
                     : "equicorrelated"},
        {"rho", cfg.covariance.rho}};
    j["d_list"] = cfg.d_list;
    j["batches"] = cfg.batches;
    j["partition"] = to_string(cfg.partition);
    std::vector<std::string> methods;
    for (const MethodSpec& m : cfg.methods) methods.push_back(m.name());
    j["methods"] = methods;
    j["alpha_grid"] = cfg.alpha_grid;
    j["replicates"] = cfg.replicates;
    j["m_b"] = cfg.m_b;
    j["seed"] = cfg.seed;
    j["nlambda_multiplier"] = cfg.nlambda_multiplier;
    j["grid_ratio"] = cfg.grid_ratio;
    if (cfg.sigma_known)
        j["sigma_known"] = *cfg.sigma_known;
    else
        j["sigma_known"] = nullptr;
    j["threads"] = cfg.threads;
    return j.dump(2);
}

}  // namespace mknock
