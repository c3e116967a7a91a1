# config.py - Конфигурация
"""
Конфигурация impulse-lab: допуски интеграторов, сиды, параллелизм, логирование
"""
import logging
import os
from dataclasses import dataclass, fields
from dotenv import load_dotenv

logger = logging.getLogger(__name__)

JAC_MODES = ("finite-difference", "variational", "analytic")


@dataclass
class Config:
    # Интегрирование ОДУ
    ode_tol: float = 1e-10          # rtol = atol для solve_ivp
    search_ode_tol: float = 1e-8    # Допуск внутри поиска и сэмплирования облаков
    h_jac: float = 1e-6             # Относительный шаг центральных разностей

    # Допуски проверок
    tol_push: float = 1e-5          # |Dφ·g_α - e_{n+α}|
    tol_equiv: float = 1e-6         # p.d. решение против space-time системы
    tol_value: float = 1e-3         # Шум поиска значения функции цены
    tol_sweep: float = 1e-9         # Сходимость импульсной релаксации в HJB

    # Карта flow-box: как считать Dφ
    jac_mode: str = "finite-difference"

    # Управления
    k_max: int = 12                 # Усечение бесконечных семейств кусков
    n_v: int = 5                    # Дискретизация бокса V по каждой оси
    sample_radius: float = 1.0      # Радиус сэмплирования, если U = full

    # Воспроизводимость и параллелизм
    seed: int = 0
    threads: int = 1

    # Выходные файлы
    out_dir: str = "out"

    # Логирование
    log_level: str = "INFO"
    log_file: str = "logs/impulse_lab.log"

    @classmethod
    def from_env(cls, override: bool = True) -> 'Config':
        """
        Создает конфиг из переменных окружения IMPULSE_*

        Args:
            override: Если True, переменные из .env файла переопределят системные переменные окружения
        """
        load_dotenv(override=override)

        return cls(
            ode_tol=float(os.getenv("IMPULSE_ODE_TOL", "1e-10")),
            search_ode_tol=float(os.getenv("IMPULSE_SEARCH_ODE_TOL", "1e-8")),
            h_jac=float(os.getenv("IMPULSE_H_JAC", "1e-6")),
            tol_push=float(os.getenv("IMPULSE_TOL_PUSH", "1e-5")),
            tol_equiv=float(os.getenv("IMPULSE_TOL_EQUIV", "1e-6")),
            tol_value=float(os.getenv("IMPULSE_TOL_VALUE", "1e-3")),
            tol_sweep=float(os.getenv("IMPULSE_TOL_SWEEP", "1e-9")),
            jac_mode=os.getenv("IMPULSE_JAC_MODE", "finite-difference"),
            k_max=int(os.getenv("IMPULSE_K_MAX", "12")),
            n_v=int(os.getenv("IMPULSE_N_V", "5")),
            sample_radius=float(os.getenv("IMPULSE_SAMPLE_RADIUS", "1.0")),
            seed=int(os.getenv("IMPULSE_SEED", "0")),
            threads=int(os.getenv("IMPULSE_THREADS", "1")),
            out_dir=os.getenv("IMPULSE_OUT_DIR", "out"),
            log_level=os.getenv("LOG_LEVEL", "INFO"),
            log_file=os.getenv("LOG_FILE", "logs/impulse_lab.log"),
        )

    def validate(self) -> bool:
        """
        Проверяет, что допуски положительны и режимы известны
        """
        problems = []

        positive_fields = [
            "ode_tol", "search_ode_tol", "h_jac", "tol_push",
            "tol_equiv", "tol_value", "tol_sweep", "sample_radius",
        ]
        for name in positive_fields:
            if not getattr(self, name) > 0:
                problems.append(f"{name} должен быть > 0")

        if self.jac_mode not in JAC_MODES:
            problems.append(f"jac_mode '{self.jac_mode}' не из {JAC_MODES}")
        if self.k_max < 1:
            problems.append("k_max должен быть >= 1")
        if self.n_v < 1:
            problems.append("n_v должен быть >= 1")
        if self.threads < 1:
            problems.append("threads должен быть >= 1")
        if self.log_level.upper() not in logging._nameToLevel:
            problems.append(f"неизвестный log_level '{self.log_level}'")

        if problems:
            logger.error(f"❌ Ошибки конфигурации: {'; '.join(problems)}")
            return False

        return True

    def as_dict(self) -> dict:
        """Допуски и параметры для манифеста запуска"""
        return {f.name: getattr(self, f.name) for f in fields(self)}


# Глобальный экземпляр конфига
config = Config.from_env()
