#include "primfuse/edit_script.hpp"

#include <fstream>
#include <sstream>

namespace primfuse {

namespace {

EditOp read_matrix(std::istringstream& ss, const std::string& line) {
    Mat4 m;
    for (int r = 0; r < 4; ++r)
        for (int c = 0; c < 4; ++c)
            if (!(ss >> m(r, c)))
                throw std::runtime_error("edit script: expected 16 matrix values: " + line);
    if (std::abs(m(3, 0)) > 1e-12 || std::abs(m(3, 1)) > 1e-12 || std::abs(m(3, 2)) > 1e-12 ||
        std::abs(m(3, 3) - 1.0) > 1e-12)
        throw std::runtime_error("edit script: bottom matrix row must be 0 0 0 1: " + line);
    EditOp op{m.topLeftCorner<3, 3>(), m.topRightCorner<3, 1>()};
    if (!op.is_rigid()) throw std::runtime_error("edit script: transform is not rigid: " + line);
    return op;
}

}  // namespace

std::vector<EditCommand> parse_edit_script(std::istream& is) {
    std::vector<EditCommand> commands;
    std::string line;
    while (std::getline(is, line)) {
        size_t hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        std::istringstream ss(line);
        std::string verb;
        if (!(ss >> verb)) continue;
        EditCommand cmd;
        if (verb == "delete") {
            cmd.type = EditCommand::Type::Delete;
            if (!(ss >> cmd.plane_id) || cmd.plane_id < 1)
                throw std::runtime_error("edit script: delete needs a plane id: " + line);
        } else if (verb == "transform") {
            cmd.type = EditCommand::Type::TransformPlane;
            if (!(ss >> cmd.plane_id) || cmd.plane_id < 1)
                throw std::runtime_error("edit script: transform needs a plane id: " + line);
            cmd.op = read_matrix(ss, line);
        } else if (verb == "transform_region") {
            cmd.type = EditCommand::Type::TransformRegion;
            if (!(ss >> cmd.aabb_min.x() >> cmd.aabb_min.y() >> cmd.aabb_min.z() >>
                  cmd.aabb_max.x() >> cmd.aabb_max.y() >> cmd.aabb_max.z()))
                throw std::runtime_error("edit script: transform_region needs an AABB: " + line);
            if ((cmd.aabb_min.array() > cmd.aabb_max.array()).any())
                throw std::runtime_error("edit script: empty AABB: " + line);
            cmd.op = read_matrix(ss, line);
        } else {
            throw std::runtime_error("edit script: unknown command: " + verb);
        }
        commands.push_back(cmd);
    }
    return commands;
}

std::vector<EditCommand> parse_edit_script_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot read edit script: " + path);
    return parse_edit_script(is);
}

EditApplyResult apply_edit_script(const std::vector<EditCommand>& commands, SemanticVolume& vol,
                                  Registry& reg) {
    EditApplyResult res{EditState(vol), 0, 0, 0};
    for (const auto& cmd : commands) {
        switch (cmd.type) {
            case EditCommand::Type::Delete:
                res.voxels_cleared += vol.delete_primitive(cmd.plane_id, reg);
                ++res.deletions;
                break;
            case EditCommand::Type::TransformPlane: {
                const Plane* p = reg.find(cmd.plane_id);
                if (!p || !p->alive)
                    throw std::runtime_error("edit script: transform references unknown plane " +
                                             std::to_string(cmd.plane_id));
                res.state.add_plane_move(vol, cmd.plane_id, cmd.op);
                ++res.transforms;
                break;
            }
            case EditCommand::Type::TransformRegion:
                res.state.add_region_move(cmd.aabb_min, cmd.aabb_max, cmd.op);
                ++res.transforms;
                break;
        }
    }
    return res;
}

}  // namespace primfuse
