#pragma once

#include <map>
#include <set>
#include <string>
#include <vector>

#include "scadapter/autodiff.hpp"
#include "scadapter/serialization.hpp"

namespace scadapter {

// Ownership groups for model weights. Adapter fine-tuning may update only the
// four adapter components; everything tagged base is the frozen pretrained UNet.
enum class Component { base, content_tokenizer, style_tokenizer, cross_attention, kvs_injection };

std::string to_string(Component c);
Component component_from_string(const std::string& name);

inline const std::set<Component>& adapter_components() {
    static const std::set<Component> s{Component::content_tokenizer, Component::style_tokenizer,
                                       Component::cross_attention, Component::kvs_injection};
    return s;
}

inline const std::set<Component>& all_components() {
    static const std::set<Component> s{Component::base, Component::content_tokenizer, Component::style_tokenizer,
                                       Component::cross_attention, Component::kvs_injection};
    return s;
}

struct Parameter {
    std::string name;
    Component component;
    ad::Var var;
};

// Named, ordered weight collection. Insertion order is stable and defines the
// serialization and optimizer order.
class ParameterStore {
public:
    ParameterStore() = default;
    ParameterStore(const ParameterStore& other);  // deep copy of values
    ParameterStore& operator=(const ParameterStore& other);
    ParameterStore(ParameterStore&&) noexcept = default;
    ParameterStore& operator=(ParameterStore&&) noexcept = default;

    const ad::Var& add(const std::string& name, Component component, Eigen::MatrixXd value);
    const ad::Var& get(const std::string& name) const;
    bool contains(const std::string& name) const { return index_.count(name) != 0; }

    std::vector<Parameter>& all() noexcept { return params_; }
    const std::vector<Parameter>& all() const noexcept { return params_; }

    // Marks exactly the given components as requiring gradients.
    void set_trainable(const std::set<Component>& components);
    void zero_grad();
    std::size_t count_scalars(const std::set<Component>& components = all_components()) const;

    json to_json() const;
    static ParameterStore from_json(const json& j);

private:
    std::vector<Parameter> params_;
    std::map<std::string, std::size_t> index_;
};

}  // namespace scadapter
