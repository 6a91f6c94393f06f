#include "relsar/config_io.hpp"

using nlohmann::json;

namespace relsar {

void check_known_keys(const json& obj, std::initializer_list<const char*> known, const std::string& context) {
    for (auto it = obj.begin(); it != obj.end(); ++it) {
        bool ok = false;
        for (const char* k : known)
            if (it.key() == k) {
                ok = true;
                break;
            }
        if (!ok) throw ConfigError(context + ": unknown field '" + it.key() + "'");
    }
}

json to_json(const EncoderConfig& c) {
    return json{{"conv_filters", c.conv_filters}, {"kernel_size", c.kernel_size}, {"layers", c.layers},
                {"heads", c.heads},               {"d_model", c.d_model},         {"dropout", c.dropout_rate},
                {"seq_len", c.seq_len},           {"joints", c.joints}};
}

EncoderConfig encoder_config_from_json(const json& j) {
    check_known_keys(j, {"conv_filters", "kernel_size", "layers", "heads", "d_model", "dropout", "seq_len", "joints"},
                     "encoder");
    EncoderConfig c;
    c.conv_filters = j.value("conv_filters", c.conv_filters);
    c.kernel_size = j.value("kernel_size", c.kernel_size);
    c.layers = j.value("layers", c.layers);
    c.heads = j.value("heads", c.heads);
    c.d_model = j.value("d_model", c.d_model);
    c.dropout_rate = j.value("dropout", c.dropout_rate);
    c.seq_len = j.value("seq_len", c.seq_len);
    c.joints = j.value("joints", c.joints);
    c.validate();
    return c;
}

json to_json(const HeadConfig& c) {
    return json{{"proj_hidden", c.proj_hidden}, {"proj_dim", c.proj_dim}, {"activation", to_string(c.activation)}};
}

HeadConfig head_config_from_json(const json& j) {
    check_known_keys(j, {"proj_hidden", "proj_dim", "activation"}, "heads");
    HeadConfig c;
    c.proj_hidden = j.value("proj_hidden", c.proj_hidden);
    c.proj_dim = j.value("proj_dim", c.proj_dim);
    if (j.contains("activation")) c.activation = head_activation_from_string(j["activation"].get<std::string>());
    c.validate();
    return c;
}

json to_json(const AugmentConfig& c) {
    return json{{"noise_std", c.noise_std}, {"scale_lo", c.scale_lo},          {"scale_hi", c.scale_hi},
                {"flip_prob", c.flip_prob}, {"flip_mode", to_string(c.flip_mode)}};
}

AugmentConfig augment_config_from_json(const json& j) {
    check_known_keys(j, {"noise_std", "scale_lo", "scale_hi", "flip_prob", "flip_mode"}, "augment");
    AugmentConfig c;
    c.noise_std = j.value("noise_std", c.noise_std);
    c.scale_lo = j.value("scale_lo", c.scale_lo);
    c.scale_hi = j.value("scale_hi", c.scale_hi);
    c.flip_prob = j.value("flip_prob", c.flip_prob);
    if (j.contains("flip_mode")) c.flip_mode = flip_mode_from_string(j["flip_mode"].get<std::string>());
    c.validate();
    return c;
}

} // namespace relsar
