#include "scadapter/parameters.hpp"

#include "scadapter/errors.hpp"

namespace scadapter {

std::string to_string(Component c) {
    switch (c) {
        case Component::base: return "base";
        case Component::content_tokenizer: return "content_tokenizer";
        case Component::style_tokenizer: return "style_tokenizer";
        case Component::cross_attention: return "cross_attention";
        case Component::kvs_injection: return "kvs_injection";
    }
    return "unknown";
}

Component component_from_string(const std::string& name) {
    for (auto c : all_components())
        if (to_string(c) == name) return c;
    throw FormatError("unknown parameter component '" + name + "'");
}

ParameterStore::ParameterStore(const ParameterStore& other) : index_(other.index_) {
    params_.reserve(other.params_.size());
    for (const auto& p : other.params_) {
        auto var = ad::parameter(p.var->value);
        var->requires_grad = p.var->requires_grad;
        params_.push_back({p.name, p.component, std::move(var)});
    }
}

ParameterStore& ParameterStore::operator=(const ParameterStore& other) {
    if (this != &other) *this = ParameterStore(other);
    return *this;
}

const ad::Var& ParameterStore::add(const std::string& name, Component component, Eigen::MatrixXd value) {
    if (contains(name)) throw ConfigError("duplicate parameter '" + name + "'");
    index_.emplace(name, params_.size());
    params_.push_back({name, component, ad::parameter(std::move(value))});
    return params_.back().var;
}

const ad::Var& ParameterStore::get(const std::string& name) const {
    const auto it = index_.find(name);
    if (it == index_.end()) throw ConfigError("unknown parameter '" + name + "'");
    return params_[it->second].var;
}

void ParameterStore::set_trainable(const std::set<Component>& components) {
    for (auto& p : params_) p.var->requires_grad = components.count(p.component) != 0;
}

void ParameterStore::zero_grad() {
    for (auto& p : params_) p.var->grad.resize(0, 0);
}

std::size_t ParameterStore::count_scalars(const std::set<Component>& components) const {
    std::size_t n = 0;
    for (const auto& p : params_)
        if (components.count(p.component)) n += static_cast<std::size_t>(p.var->value.size());
    return n;
}

json ParameterStore::to_json() const {
    json arr = json::array();
    for (const auto& p : params_)
        arr.push_back({{"name", p.name}, {"component", to_string(p.component)}, {"value", matrix_to_json(p.var->value)}});
    return arr;
}

ParameterStore ParameterStore::from_json(const json& j) {
    ParameterStore store;
    try {
        for (const auto& item : j)
            store.add(item.at("name").get<std::string>(), component_from_string(item.at("component").get<std::string>()),
                      matrix_from_json(item.at("value")));
    } catch (const json::exception& e) {
        throw FormatError(std::string("malformed parameter list: ") + e.what());
    }
    return store;
}

}  // namespace scadapter
