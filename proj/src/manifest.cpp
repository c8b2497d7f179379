#include "maskfuse/manifest.hpp"

#include <fstream>

namespace maskfuse {

std::vector<const ManifestEvent*> RunManifest::events_of(const std::string& module) const {
    std::vector<const ManifestEvent*> out;
    for (const ManifestEvent& e : events)
        if (e.module == module) out.push_back(&e);
    return out;
}

const ManifestEvent* RunManifest::event_at(const std::string& module, int step) const {
    for (const ManifestEvent& e : events)
        if (e.module == module && e.step == step) return &e;
    return nullptr;
}

nlohmann::ordered_json RunManifest::to_json() const {
    nlohmann::ordered_json j;
    j["config"] = config;
    j["seed"] = seed;
    j["hashes"] = {{"backend_weights", backend_weights_hash},
                   {"adapters", adapter_hashes},
                   {"reference_features", reference_features_hash}};
    nlohmann::ordered_json evs = nlohmann::ordered_json::array();
    for (const ManifestEvent& e : events) {
        nlohmann::ordered_json je;
        je["step"] = e.step;
        je["t"] = e.t;
        je["module"] = e.module;
        if (!e.layer.empty()) je["layer"] = e.layer;
        if (!e.note.empty()) je["note"] = e.note;
        if (!e.values.empty()) je["values"] = e.values;
        evs.push_back(std::move(je));
    }
    j["events"] = std::move(evs);
    j["output"] = {{"image_hash", output_image_hash},
                   {"latent_hash", output_latent_hash},
                   {"image_path", image_path}};
    j["status"] = status;
    return j;
}

RunManifest RunManifest::from_json(const nlohmann::ordered_json& j) {
    try {
        RunManifest m;
        m.config = j.at("config");
        m.seed = j.at("seed").get<uint64_t>();
        const nlohmann::ordered_json& h = j.at("hashes");
        m.backend_weights_hash = h.at("backend_weights").get<std::string>();
        m.adapter_hashes =
            h.at("adapters").get<std::map<std::string, std::string>>();
        m.reference_features_hash = h.at("reference_features").get<std::string>();
        for (const nlohmann::ordered_json& je : j.at("events")) {
            ManifestEvent e;
            e.step = je.at("step").get<int>();
            e.t = je.at("t").get<int>();
            e.module = je.at("module").get<std::string>();
            e.layer = je.value("layer", std::string{});
            e.note = je.value("note", std::string{});
            if (je.contains("values"))
                e.values = je.at("values").get<std::map<std::string, double>>();
            m.events.push_back(std::move(e));
        }
        const nlohmann::ordered_json& o = j.at("output");
        m.output_image_hash = o.at("image_hash").get<std::string>();
        m.output_latent_hash = o.at("latent_hash").get<std::string>();
        m.image_path = o.at("image_path").get<std::string>();
        m.status = j.at("status").get<std::string>();
        return m;
    } catch (const nlohmann::json::exception& e) {
        throw IngestionError(std::string("manifest does not match the schema: ") + e.what());
    }
}

void RunManifest::save(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write manifest '" + path + "'");
    out << to_json().dump(2) << "\n";
}

RunManifest RunManifest::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open manifest '" + path + "'");
    nlohmann::ordered_json j = nlohmann::ordered_json::parse(in, nullptr, false);
    if (j.is_discarded()) throw IngestionError("manifest '" + path + "' is not valid JSON");
    return from_json(j);
}

}  // namespace maskfuse
