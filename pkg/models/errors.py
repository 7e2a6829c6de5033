"""实验室统一的异常与警告类型"""


class LabError(Exception):
    """所有实验错误的基类"""


class GeometryError(LabError, ValueError):
    """网格、索引或数值场不合法"""


class PositivityError(GeometryError):
    """纤维方向正定性失效

    Args:
        message: 错误描述
        node: 出错节点 (chart, i_theta, i_phi)
        value: 该节点处的最小特征值
    """

    def __init__(self, message: str, node=None, value: float = float('nan')):
        super().__init__(message)
        self.node = node
        self.value = value


class FlowError(LabError):
    """流演化或拟合失败（步长减半耗尽、优化器不收敛）"""


class ConfigError(LabError, ValueError):
    """配置文件解析或校验失败"""


class HypothesisWarning(UserWarning):
    """在定理假设不成立的输入上计算了恒等式残差"""


class ResolutionWarning(UserWarning):
    """时间或空间分辨率不足以支撑残差的量级"""
