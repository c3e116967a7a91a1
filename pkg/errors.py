"""
Исключения impulse-lab
Библиотечные функции бросают их, CLI превращает их в коды выхода
"""
from typing import Optional


class ImpulseLabError(Exception):
    """Базовое исключение проекта"""


class DslSyntaxError(ImpulseLabError):
    """Синтаксическая ошибка в DSL описании системы"""

    def __init__(self, message: str, line: int, column: int):
        self.line = line
        self.column = column
        super().__init__(f"{message} (строка {line}, столбец {column})")


class UnknownIdentifierError(ImpulseLabError):
    """Неизвестный идентификатор в выражении"""

    def __init__(self, name: str, line: Optional[int] = None):
        self.name = name
        self.line = line
        where = f" (строка {line})" if line is not None else ""
        super().__init__(f"Неизвестный идентификатор '{name}'{where}")


class DimensionMismatchError(ImpulseLabError):
    """Размерность поля или множества не совпадает с заголовком"""


class JacobianEvaluationError(ImpulseLabError):
    """Якобиан содержит нечисловые значения"""


class IntegrationError(ImpulseLabError):
    """Интегратор не смог пройти интервал (underflow шага, nan)"""


class FlowEscapeError(IntegrationError):
    """Траектория потока покинула 10-кратный рабочий бокс"""


class FlowBoxViolationError(ImpulseLabError):
    """Push-forward не имеет flow-box структуры - поля не коммутируют"""


class ControlValidationError(ImpulseLabError):
    """Управление не удовлетворяет инвариантам (покрытие, значения в U, V)"""


class NotAbsolutelyContinuousError(ControlValidationError):
    """Для прямого интегрирования нужно абсолютно непрерывное управление"""


class InputFormatError(ControlValidationError):
    """JSON файл управления или задачи не разбирается или не проходит схему"""


class HorizonError(ImpulseLabError):
    """Момент времени вне горизонта [a, b]"""


class ImpulseDomainError(ImpulseLabError):
    """Множество U не подходит как impulse domain для операции"""


class VariationBudgetError(ImpulseLabError):
    """Вариация управления превышает бюджет K"""


class SearchFailedError(ImpulseLabError):
    """Все кандидаты поиска упали при симуляции"""


class EmptyCloudError(ImpulseLabError):
    """Пустое облако точек"""


class SweepNotConvergedError(ImpulseLabError):
    """Итерации импульсной релаксации не сошлись за отведенное число проходов"""


class SweepMonotonicityError(ImpulseLabError):
    """Проход релаксации увеличил значения среза W"""
